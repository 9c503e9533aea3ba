"""One-shot denoising transport maps, their compositions, and the continuous flow.

Three interchangeable map backends are provided:

* :class:`MixtureExact` evaluates the exact minimizer of the denoising
  objective for a Gaussian mixture: ``x + t * score(smoothed mixture, x)``.
* :class:`AnalyticGaussian` is the single-Gaussian closed form
  ``(I + t S^{-1})^{-1} x + (I + t^{-1} S)^{-1} mu``.
* :class:`EmpiricalKernel` is the plug-in estimator from data: a
  Nadaraya-Watson weighted mean with Gaussian kernel variance t.

Deep flows are compositions of such maps, each retrained on the current
pushforward measure; the continuous flow is the same composition on a uniform
schedule, which is its broken-line (explicit Euler) approximation.  Both
entry points share one step routine, so matching schedules produce identical
trajectories bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ContractError, DomainError, SingularityError
from .measures import (
    Estimate,
    GaussianMixture,
    ParticleEnsemble,
    _as_points,
    kde_log_density,
    score,
    silverman_covariance,
    smooth,
)
from .pushforward import one_shot_covariance
from .rand import substream

_COV_FLOOR = 1e-10  # propagated covariance eigenvalue floor
_UNDERFLOW_LOG = math.log(1e-300)
_KDE_DATA_CAP = 2048  # diagnostics subsample sizes
_KDE_EVAL_CAP = 4096


# -- map backends ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixtureExact:
    """Exact denoising map for a Gaussian mixture at noise variance t."""

    mix: GaussianMixture
    t: float

    def __post_init__(self):
        t = float(self.t)
        if t < 0.0:
            raise ContractError(f"noise variance must be nonnegative, got {t}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "_smoothed", smooth(self.mix, t))

    @property
    def dim(self) -> int:
        return self.mix.dim

    def apply(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.dim)
        if self.t == 0.0:
            out = pts.copy()
        else:
            out = pts + self.t * score(self._smoothed, pts)
        return out[0] if single else out


@dataclass(frozen=True, eq=False)
class AnalyticGaussian:
    """Closed-form denoising map for a single Gaussian N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray
    t: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        t = float(self.t)
        if t < 0.0:
            raise ContractError(f"noise variance must be nonnegative, got {t}")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ContractError("covariance shape does not match mean dimension")
        evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if float(evals[0]) <= 0.0:
            raise ContractError("covariance must be positive definite")
        mean = mean.copy()
        cov = cov.copy()
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "_evals", evals)
        object.__setattr__(self, "_evecs", evecs)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.dim)
        if self.t == 0.0:
            out = pts.copy()
        else:
            lam = self._evals
            v = self._evecs
            shrink = lam / (lam + self.t)  # (I + t S^{-1})^{-1} in the eigenbasis
            pullback = self.t / (lam + self.t)  # (I + S/t)^{-1}, the mean term
            y = pts @ v
            w = self.mean @ v
            out = (y * shrink + w * pullback) @ v.T
        return out[0] if single else out


@dataclass(frozen=True, eq=False)
class EmpiricalKernel:
    """Plug-in denoising map: Gaussian-kernel weighted mean of the data.

    ``g(x) = sum_i d_i N(x; d_i, t I) / sum_i N(x; d_i, t I)``.  Degenerate at
    t = 0 and wherever the kernel weight sum underflows; both raise
    :class:`DomainError` rather than guessing a value.
    """

    data: ParticleEnsemble
    t: float

    def __post_init__(self):
        t = float(self.t)
        if t < 0.0:
            raise ContractError(f"noise variance must be nonnegative, got {t}")
        object.__setattr__(self, "t", t)

    @property
    def dim(self) -> int:
        return self.data.dim

    def apply(self, x) -> np.ndarray:
        if self.t == 0.0:
            raise DomainError("empirical kernel map is degenerate at t = 0")
        pts, single = _as_points(x, self.dim)
        d = self.data.points
        n, m = d.shape
        log_const = -0.5 * m * math.log(2.0 * math.pi * self.t)
        out = np.empty_like(pts)
        # chunk evaluation points to bound the (chunk x n) distance matrix
        chunk = max(1, int(8_000_000 / max(n, 1)))
        d_sq = np.sum(d * d, axis=1)
        for lo in range(0, pts.shape[0], chunk):
            block = pts[lo : lo + chunk]
            d2 = (
                np.sum(block * block, axis=1)[:, None]
                + d_sq[None, :]
                - 2.0 * (block @ d.T)
            )
            logk = -0.5 * d2 / self.t
            shift = logk.max(axis=1, keepdims=True)
            w = np.exp(logk - shift)
            wsum = w.sum(axis=1)
            log_weight_sum = np.log(wsum) + shift[:, 0] + log_const - math.log(n)
            if np.any(log_weight_sum < _UNDERFLOW_LOG):
                worst = float(np.min(log_weight_sum))
                raise DomainError(
                    f"kernel weight sum underflow (log sum {worst:.1f} < log 1e-300); "
                    "the probe point is too far from the data for bandwidth t"
                )
            out[lo : lo + chunk] = (w @ d) / wsum[:, None]
        return out[0] if single else out


DaeMap = Union[MixtureExact, AnalyticGaussian, EmpiricalKernel]


def dae_apply(transport_map: DaeMap, x) -> np.ndarray:
    """Apply a denoising transport map to one point or a batch of points."""
    return transport_map.apply(x)


def denoising_shift(transport_map: DaeMap, x) -> np.ndarray:
    """Displacement added by the map: ``dae_apply(map, x) - x``.

    This is the negated conditional mean of the noise given the observation;
    it vanishes at t = 0 and equals ``t * score(smoothed measure, x)`` for the
    exact backends.
    """
    pts = np.asarray(x, dtype=float)
    return transport_map.apply(x) - pts


def analytic_continuous_map(mean, cov, t: float, x) -> np.ndarray:
    """Closed-form continuous-flow map for N(mean, cov):

    ``sqrt(I - 2 t S^{-1}) (x - mean) + mean`` with the symmetric square root.
    Defined for ``2 t`` strictly below the smallest covariance eigenvalue;
    beyond that the flow is singular and :class:`SingularityError` reports the
    critical time.
    """
    t = float(t)
    if t < 0.0:
        raise ContractError(f"time must be nonnegative, got {t}")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if float(evals[0]) <= 0.0:
        raise ContractError("covariance must be positive definite")
    pts, single = _as_points(x, mean.shape[0])
    if t == 0.0:
        return pts[0].copy() if single else pts.copy()
    lam_min = float(evals[0])
    if 2.0 * t >= lam_min:
        raise SingularityError(
            f"continuous map is singular at t = {lam_min / 2.0!r} (requested t = {t!r})",
            critical_time=lam_min / 2.0,
        )
    factors = np.sqrt(1.0 - 2.0 * t / evals)
    out = ((pts - mean) @ evecs * factors) @ evecs.T + mean
    return out[0] if single else out


# -- schedules and trajectories -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowSchedule:
    """Per-layer noise variances tau_0..tau_L; total time is their sum."""

    taus: tuple[float, ...]

    def __post_init__(self):
        taus = tuple(float(t) for t in np.atleast_1d(np.asarray(self.taus, dtype=float)))
        if len(taus) == 0:
            raise ContractError("schedule must contain at least one layer")
        if any(t <= 0.0 for t in taus):
            raise ContractError("all layer variances must be strictly positive")
        object.__setattr__(self, "taus", taus)

    @classmethod
    def uniform(cls, t_end: float, steps: int) -> "FlowSchedule":
        t_end = float(t_end)
        steps = int(steps)
        if t_end <= 0.0:
            raise ContractError(f"total time must be positive, got {t_end}")
        if steps < 1:
            raise ContractError(f"steps must be >= 1, got {steps}")
        return cls((t_end / steps,) * steps)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(float(v) for v in np.cumsum(self.taus))

    @property
    def total_time(self) -> float:
        return self.times[-1]

    def __len__(self) -> int:
        return len(self.taus)


@dataclass(frozen=True, eq=False)
class FlowDiagnostics:
    """Per-time summary: entropy and quadratic Renyi estimates plus moments."""

    entropy: Estimate
    renyi2: Estimate
    mean: np.ndarray
    cov: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "entropy": self.entropy.value,
            "entropy_stderr": self.entropy.stderr,
            "renyi2": self.renyi2.value,
            "renyi2_stderr": self.renyi2.stderr,
            "mean": np.asarray(self.mean).tolist(),
            "cov": np.asarray(self.cov).tolist(),
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped particle states with per-time diagnostics."""

    times: tuple[float, ...]
    states: tuple[ParticleEnsemble, ...]
    diagnostics: tuple[FlowDiagnostics, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        states = tuple(self.states)
        diags = tuple(self.diagnostics)
        if not times or times[0] != 0.0:
            raise ContractError("trajectory times must start at 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ContractError("trajectory times must be strictly increasing")
        if len(states) != len(times) or len(diags) != len(times):
            raise ContractError("times, states, and diagnostics must have equal length")
        shapes = {s.points.shape for s in states}
        if len(shapes) != 1:
            raise ContractError("all trajectory states must share n and m")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "diagnostics", diags)

    @property
    def n(self) -> int:
        return self.states[0].n

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def to_csv(self, path: str | Path) -> None:
        """Long-format CSV: one row per (time, particle) with columns x1..xm."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# seed={self.states[0].seed}\n")
            writer = csv.writer(fh)
            writer.writerow(["time", "particle_id"] + [f"x{j + 1}" for j in range(self.dim)])
            for t, state in zip(self.times, self.states):
                for pid, row in enumerate(state.points):
                    writer.writerow([repr(float(t)), pid] + [repr(float(v)) for v in row])

    def diagnostics_json(self) -> dict:
        return {
            "seed": self.states[0].seed,
            "records": [
                {"time": t, **d.to_json_dict()} for t, d in zip(self.times, self.diagnostics)
            ],
        }

    def write_diagnostics(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.diagnostics_json(), indent=2, sort_keys=True) + "\n")


# -- diagnostics helpers -------------------------------------------------------------


def _moments_or_degenerate(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, m = points.shape
    if n >= 2:
        return points.mean(axis=0), np.atleast_2d(np.cov(points.T, ddof=1))
    return points.mean(axis=0), np.zeros((m, m))


def _analytic_diagnostics(points: np.ndarray, mean, cov) -> FlowDiagnostics:
    # closed forms straight from eigenvalues: composed flows can contract the
    # covariance far below what mixture validation would accept
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    m = mean.shape[0]
    log_2pi = math.log(2.0 * math.pi)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        ent_val, ren_val = float("-inf"), float("inf")
    else:
        ent_val = 0.5 * (m * (log_2pi + 1.0) + float(logdet))
        log_int = -0.5 * (m * log_2pi + float(logdet)) - 0.5 * m * math.log(2.0)
        ren_val = math.exp(log_int) - 1.0 if log_int < 700.0 else float("inf")
    emp_mean, emp_cov = _moments_or_degenerate(points)
    return FlowDiagnostics(Estimate(ent_val, 0.0), Estimate(ren_val, 0.0), emp_mean, emp_cov)


def _kde_diagnostics(points: np.ndarray, seed: int, layer: int) -> FlowDiagnostics:
    rng = substream(seed, 100 + layer)
    n = points.shape[0]
    data = points
    if n > _KDE_DATA_CAP:
        data = points[rng.choice(n, _KDE_DATA_CAP, replace=False)]
    evals = points
    if n > _KDE_EVAL_CAP:
        evals = points[rng.choice(n, _KDE_EVAL_CAP, replace=False)]
    bw = silverman_covariance(data)
    lp = kde_log_density(data, bw, evals)
    ne = evals.shape[0]
    dens = np.exp(lp)
    ent = Estimate(float(-np.mean(lp)), float(np.std(lp, ddof=1) / math.sqrt(ne)))
    ren = Estimate(float(np.mean(dens) - 1.0), float(np.std(dens, ddof=1) / math.sqrt(ne)))
    emp_mean, emp_cov = _moments_or_degenerate(points)
    return FlowDiagnostics(ent, ren, emp_mean, emp_cov)


# -- flows -------------------------------------------------------------------------


def compose(
    mix0: GaussianMixture,
    schedule: FlowSchedule,
    ensemble: ParticleEnsemble,
    retrain: str = "analytic",
    cov_floor: float = 0.0,
) -> Trajectory:
    """Compose per-layer denoising maps, retraining each layer on the current measure.

    ``retrain='analytic'`` propagates the single-Gaussian measure in closed
    form (mean fixed, covariance through the one-shot pushforward) and uses
    the :class:`AnalyticGaussian` map; the ensemble may then be arbitrary
    probe points.  ``retrain='empirical'`` rebuilds an
    :class:`EmpiricalKernel` map from the current particles with bandwidth
    equal to the layer's own noise variance, matching the map's smoothing
    scale.

    A finite composition contracts the measure but never loses rank, so by
    default there is no singular time; callers that approximate the continuous
    flow pass a positive ``cov_floor`` and get a :class:`SingularityError`
    (with the trajectory built so far in ``partial``) if the propagated
    covariance drops below it.
    """
    if retrain not in ("analytic", "empirical"):
        raise ContractError(f"retrain mode must be 'analytic' or 'empirical', got {retrain!r}")
    if ensemble.dim != mix0.dim:
        raise ContractError(f"ensemble dimension {ensemble.dim} does not match measure dimension {mix0.dim}")
    if retrain == "analytic" and mix0.k != 1:
        raise ContractError("analytic retraining needs a single-Gaussian initial measure")
    if retrain == "empirical" and ensemble.n < 10:
        raise ContractError(f"empirical retraining needs at least 10 particles, got {ensemble.n}")

    seed = ensemble.seed
    points = ensemble.points
    times = [0.0]
    states = [ensemble]

    if retrain == "analytic":
        mean = mix0.means[0]
        cov = mix0.covs[0]
        diags = [_analytic_diagnostics(points, mean, cov)]
    else:
        diags = [_kde_diagnostics(points, seed, 0)]

    for layer, tau in enumerate(schedule.taus):
        if retrain == "analytic":
            layer_map: DaeMap = AnalyticGaussian(mean, cov, tau)
            points = layer_map.apply(points)
            cov = one_shot_covariance(cov, tau)
            lam_min = float(np.linalg.eigvalsh(cov)[0])
            if lam_min < cov_floor:
                raise SingularityError(
                    f"propagated covariance reached the eigenvalue floor at layer {layer}",
                    partial=Trajectory(tuple(times), tuple(states), tuple(diags)),
                )
            diag = _analytic_diagnostics(points, mean, cov)
        else:
            layer_map = EmpiricalKernel(ParticleEnsemble(points, seed), tau)
            points = layer_map.apply(points)
            diag = _kde_diagnostics(points, seed, layer + 1)
        times.append(schedule.times[layer])
        states.append(ParticleEnsemble(points, seed))
        diags.append(diag)

    return Trajectory(tuple(times), tuple(states), tuple(diags))


def continuous_flow(
    mix0: GaussianMixture,
    t_end: float,
    steps: int,
    ensemble: ParticleEnsemble,
    retrain: str | None = None,
) -> Trajectory:
    """Broken-line approximation of the continuous flow on a uniform schedule.

    Delegates to :func:`compose` with ``tau = t_end / steps``, so matching
    uniform schedules and modes yield bit-identical trajectories.  The retrain
    mode defaults to analytic for a single Gaussian and empirical otherwise.
    For a single Gaussian the total time must stay strictly below the
    singular time (half the smallest covariance eigenvalue).
    """
    t_end = float(t_end)
    if mix0.k == 1:
        lam_min = float(np.linalg.eigvalsh(mix0.covs[0])[0])
        if t_end >= lam_min / 2.0:
            raise SingularityError(
                f"continuous flow is singular at t = {lam_min / 2.0!r} (requested t_end = {t_end!r})",
                critical_time=lam_min / 2.0,
            )
    mode = retrain if retrain is not None else ("analytic" if mix0.k == 1 else "empirical")
    return compose(mix0, FlowSchedule.uniform(t_end, steps), ensemble, mode, cov_floor=_COV_FLOOR)


def one_shot_orbit(
    mix0: GaussianMixture, times: Sequence[float], ensemble: ParticleEnsemble
) -> Trajectory:
    """Orbit of the one-shot map: each time t maps the original points once.

    Unlike a composed flow, every state is produced by a single map trained on
    the initial measure with noise variance t.
    """
    ts = [float(t) for t in times]
    if not ts or any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] <= 0.0:
        raise ContractError("orbit times must be strictly increasing and positive")
    if ensemble.dim != mix0.dim:
        raise ContractError("ensemble dimension does not match measure dimension")

    seed = ensemble.seed
    out_times = [0.0] + ts
    states = [ensemble]
    diags = []
    if mix0.k == 1:
        diags.append(_analytic_diagnostics(ensemble.points, mix0.means[0], mix0.covs[0]))
    else:
        diags.append(_kde_diagnostics(ensemble.points, seed, 0))
    for layer, t in enumerate(ts):
        pts = MixtureExact(mix0, t).apply(ensemble.points)
        states.append(ParticleEnsemble(pts, seed))
        if mix0.k == 1:
            diags.append(
                _analytic_diagnostics(pts, mix0.means[0], one_shot_covariance(mix0.covs[0], t))
            )
        else:
            diags.append(_kde_diagnostics(pts, seed, layer + 1))
    return Trajectory(tuple(out_times), tuple(states), tuple(diags))
