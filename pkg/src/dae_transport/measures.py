"""Gaussian-mixture measures with exact densities, derivatives, and sampling.

A :class:`GaussianMixture` is an immutable weighted sum of full-covariance
Gaussians.  Every analytic quantity the rest of the package needs is exposed
here as a pure function of the mixture: density, log density, score
(gradient of the log density), density gradient and Laplacian, Gaussian
smoothing (convolution), differential entropy, Renyi entropy, seeded
sampling, and the zero-mean Gaussian noise identity residual.

Log densities are evaluated with a max-shifted log-sum-exp so heavily
smoothed mixtures do not underflow.  Each component covariance is stored
with a cached spectral factorization; solves, log determinants, and
symmetric square roots all reuse it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError, DomainError
from .rand import substream

_LOG_2PI = math.log(2.0 * math.pi)

# Validation tolerances for mixture construction.
_WEIGHT_SUM_TOL = 1e-12
_SYMMETRY_TOL = 1e-12
_SPD_EIG_RATIO = 1e-12  # min eigenvalue must exceed this fraction of the max

#: Default sample count for Monte Carlo estimates; always paired with a
#: reported standard error.
MC_DEFAULT_N = 100_000


class Estimate(NamedTuple):
    """A numeric estimate with its standard error (0.0 when exact)."""

    value: float
    stderr: float


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    shift = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    out = np.log(np.sum(np.exp(a - shift), axis=axis)) + np.squeeze(shift, axis=axis)
    return out


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted mixture of full-covariance Gaussians on R^m.

    Parameters
    ----------
    weights : (k,) array of strictly positive weights summing to 1.
    means : (k, m) array of component means.
    covs : (k, m, m) array of symmetric positive-definite covariances.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covs, dtype=float)
        if cov.ndim == 2:
            cov = cov[np.newaxis]
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise ContractError("weights, means, covs must have shapes (k,), (k,m), (k,m,m)")
        k, m = mu.shape
        if w.shape != (k,) or cov.shape != (k, m, m):
            raise ContractError(
                f"inconsistent component shapes: weights {w.shape}, means {mu.shape}, covs {cov.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ContractError("mixture parameters must be finite")
        if np.any(w <= 0.0):
            raise ContractError("mixture weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise ContractError(f"mixture weights sum to {w.sum()!r}, expected 1 within {_WEIGHT_SUM_TOL}")

        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - np.swapaxes(cov, 1, 2))) > _SYMMETRY_TOL * scale:
            raise ContractError("covariances must be symmetric within 1e-12")
        # own all arrays before freezing them, so callers' arrays stay writable
        w = w.copy()
        mu = mu.copy()
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))

        evals, evecs = np.linalg.eigh(cov)
        for i in range(k):
            lo, hi = float(evals[i, 0]), float(evals[i, -1])
            if hi <= 0.0 or lo <= _SPD_EIG_RATIO * hi:
                raise ContractError(
                    f"component {i} covariance is not positive definite "
                    f"(eigenvalues in [{lo:.3e}, {hi:.3e}])"
                )

        for arr in (w, mu, cov, evals, evecs):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        object.__setattr__(self, "_evals", evals)
        object.__setattr__(self, "_evecs", evecs)
        # log of the Gaussian normalization constant per component
        log_norm = -0.5 * (m * _LOG_2PI + np.log(evals).sum(axis=1))
        log_norm.flags.writeable = False
        object.__setattr__(self, "_log_norm", log_norm)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_components(cls, components: Iterable[tuple[float, Sequence[float], Sequence[Sequence[float]]]]):
        comps = list(components)
        if not comps:
            raise ContractError("mixture needs at least one component")
        try:
            w = np.array([c[0] for c in comps], dtype=float)
            mu = np.array([np.atleast_1d(c[1]) for c in comps], dtype=float)
            cov = np.array([np.atleast_2d(c[2]) for c in comps], dtype=float)
        except ValueError as exc:  # ragged shapes across components
            raise ContractError(f"components do not share a common dimension: {exc}") from exc
        return cls(w, mu, cov)

    @classmethod
    def single(cls, mean: Sequence[float], cov: Sequence[Sequence[float]]):
        """One-component mixture, i.e. a plain Gaussian."""
        return cls.from_components([(1.0, mean, cov)])

    @classmethod
    def standard(cls, dim: int):
        """Standard normal in ``dim`` dimensions."""
        return cls.single(np.zeros(dim), np.eye(dim))

    # -- basic accessors ------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def components(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        return [(float(self.weights[i]), self.means[i], self.covs[i]) for i in range(self.k)]

    def __repr__(self) -> str:  # keep array dumps out of tracebacks
        return f"GaussianMixture(k={self.k}, dim={self.dim})"

    # -- JSON interchange ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "components": [
                {"weight": float(w), "mean": m.tolist(), "cov": c.tolist()}
                for w, m, c in self.components
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GaussianMixture":
        try:
            dim = int(doc["dim"])
            comps = doc["components"]
            mix = cls.from_components([(c["weight"], c["mean"], c["cov"]) for c in comps])
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed mixture document: {exc}") from exc
        if mix.dim != dim:
            raise ContractError(f"declared dim {dim} does not match component dim {mix.dim}")
        return mix


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """n points in R^m together with the seed that produced them."""

    points: np.ndarray
    seed: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, np.newaxis]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ContractError("ensemble points must form a nonempty (n, m) array")
        if not np.all(np.isfinite(pts)):
            raise ContractError("ensemble points must be finite")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __repr__(self) -> str:
        return f"ParticleEnsemble(n={self.n}, dim={self.dim}, seed={self.seed})"

    def to_csv(self, path: str | Path) -> None:
        """Write points as CSV with header x1..xm and a seed comment line."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# seed={self.seed}\n")
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.dim)])
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ParticleEnsemble":
        path = Path(path)
        seed = 0
        rows: list[list[float]] = []
        with path.open("r", newline="") as fh:
            header_seen = False
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if "seed=" in line:
                        seed = int(line.split("seed=", 1)[1])
                    continue
                if not header_seen:
                    header_seen = True  # column names
                    continue
                rows.append([float(v) for v in line.split(",")])
        return cls(np.array(rows, dtype=float), seed)


# -- point handling -----------------------------------------------------------


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce x into an (n, dim) array; report whether input was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ContractError(f"scalar point given for a {dim}-dimensional mixture")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ContractError(f"point has dimension {arr.shape[0]}, mixture has dimension {dim}")
        return arr.reshape(1, dim), True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise ContractError(f"points have dimension {arr.shape[1]}, mixture has dimension {dim}")
        return arr, False
    raise ContractError("points must be a vector or an (n, m) array")


def _component_terms(mix: GaussianMixture, pts: np.ndarray):
    """Per-component log densities (with log weights) and whitened offsets.

    Returns ``(logs, whitened)`` where ``logs[n, i]`` is
    ``log w_i + log N(x_n; mu_i, S_i)`` and ``whitened[i]`` holds the
    spectral-basis offsets used to reconstruct solves ``S_i^{-1}(x - mu_i)``.
    """
    n = pts.shape[0]
    k = mix.k
    logs = np.empty((n, k))
    whitened = []
    logw = np.log(mix.weights)
    for i in range(k):
        d = pts - mix.means[i]
        y = d @ mix._evecs[i]  # coordinates in the eigenbasis
        quad = np.sum(y * y / mix._evals[i], axis=1)
        logs[:, i] = logw[i] + mix._log_norm[i] - 0.5 * quad
        whitened.append(y)
    return logs, whitened


# -- densities and derivatives --------------------------------------------------


def log_density(mix: GaussianMixture, x) -> float | np.ndarray:
    """Log of the mixture density, stable for strongly smoothed mixtures."""
    pts, single = _as_points(x, mix.dim)
    logs, _ = _component_terms(mix, pts)
    out = _logsumexp(logs, axis=1)
    return float(out[0]) if single else out


def density(mix: GaussianMixture, x) -> float | np.ndarray:
    """Mixture density sum_i w_i N(x; mu_i, S_i)."""
    out = np.exp(log_density(mix, x))
    return float(out) if np.ndim(out) == 0 else out


def score(mix: GaussianMixture, x) -> np.ndarray:
    """Gradient of the log density.

    Computed analytically as the responsibility-weighted sum of the
    per-component terms ``-S_i^{-1}(x - mu_i)``.
    """
    pts, single = _as_points(x, mix.dim)
    logs, whitened = _component_terms(mix, pts)
    shift = logs.max(axis=1, keepdims=True)
    resp = np.exp(logs - shift)
    resp /= resp.sum(axis=1, keepdims=True)
    out = np.zeros_like(pts)
    for i in range(mix.k):
        pull = -(whitened[i] / mix._evals[i]) @ mix._evecs[i].T
        out += resp[:, i : i + 1] * pull
    return out[0] if single else out


def density_gradient(mix: GaussianMixture, x) -> np.ndarray:
    """Gradient of the density itself: sum_i w_i N_i(x) (-S_i^{-1}(x - mu_i))."""
    pts, single = _as_points(x, mix.dim)
    logs, whitened = _component_terms(mix, pts)
    out = np.zeros_like(pts)
    for i in range(mix.k):
        vals = np.exp(logs[:, i])
        pull = -(whitened[i] / mix._evals[i]) @ mix._evecs[i].T
        out += vals[:, np.newaxis] * pull
    return out[0] if single else out


def laplacian_density(mix: GaussianMixture, x) -> float | np.ndarray:
    """Laplacian of the density.

    Uses the closed form per component:
    ``lap N = N * (|S^{-1}(x - mu)|^2 - tr S^{-1})``.
    """
    pts, single = _as_points(x, mix.dim)
    logs, whitened = _component_terms(mix, pts)
    out = np.zeros(pts.shape[0])
    for i in range(mix.k):
        vals = np.exp(logs[:, i])
        solve_sq = np.sum((whitened[i] / mix._evals[i]) ** 2, axis=1)
        out += vals * (solve_sq - float(np.sum(1.0 / mix._evals[i])))
    return float(out[0]) if single else out


# -- smoothing -----------------------------------------------------------------


def smooth(mix: GaussianMixture, t: float) -> GaussianMixture:
    """Convolve the mixture with centered isotropic Gaussian noise of variance t.

    Each component covariance gains ``t * I``; weights and means are
    untouched.  ``t = 0`` returns the mixture unchanged.
    """
    t = float(t)
    if t < 0.0:
        raise ContractError(f"noise variance must be nonnegative, got {t}")
    if t == 0.0:
        return mix
    return GaussianMixture(mix.weights, mix.means, mix.covs + t * np.eye(mix.dim))


def convolve(mix: GaussianMixture, cov) -> GaussianMixture:
    """Convolve with a centered Gaussian of full covariance ``cov``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mix.dim, mix.dim):
        raise ContractError(f"kernel covariance must be {mix.dim}x{mix.dim}")
    return GaussianMixture(mix.weights, mix.means, mix.covs + cov[np.newaxis])


# -- entropies -----------------------------------------------------------------


def entropy(mix: GaussianMixture, n: int = MC_DEFAULT_N, seed: int = 0) -> Estimate:
    """Differential entropy ``-E[log mu]``.

    A single-component mixture gets the closed form
    ``(m/2) log(2 pi e) + (1/2) log det S`` with zero standard error; a
    k >= 2 mixture gets a seeded Monte Carlo estimate with its standard error.
    """
    if mix.k == 1:
        value = 0.5 * (mix.dim * (_LOG_2PI + 1.0) + float(np.log(mix._evals[0]).sum()))
        return Estimate(value, 0.0)
    ens = sample(mix, n, seed)
    lp = log_density(mix, ens.points)
    return Estimate(float(-np.mean(lp)), float(np.std(lp, ddof=1) / math.sqrt(n)))


def renyi_entropy(mix: GaussianMixture, alpha: float, n: int = MC_DEFAULT_N, seed: int = 0) -> Estimate:
    """Renyi entropy functional ``int (mu^alpha - mu) / (alpha - 1)``.

    Closed form for a single Gaussian via ``int N^alpha``; seeded Monte Carlo
    otherwise.  ``alpha`` must be positive and different from 1 (use
    :func:`entropy` for the alpha -> 1 limit).
    """
    alpha = float(alpha)
    if alpha <= 0.0 or alpha == 1.0:
        raise DomainError(
            f"alpha must be positive and != 1 (got {alpha}); use entropy() for the alpha -> 1 limit"
        )
    if mix.k == 1:
        log_det = float(np.log(mix._evals[0]).sum())
        log_int = 0.5 * (1.0 - alpha) * (mix.dim * _LOG_2PI + log_det) - 0.5 * mix.dim * math.log(alpha)
        return Estimate((math.exp(log_int) - 1.0) / (alpha - 1.0), 0.0)
    ens = sample(mix, n, seed)
    lp = log_density(mix, ens.points)
    vals = (np.exp((alpha - 1.0) * lp) - 1.0) / (alpha - 1.0)
    return Estimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n)))


# -- sampling ------------------------------------------------------------------


def sample(mix: GaussianMixture, n: int, seed: int) -> ParticleEnsemble:
    """Draw n independent points: component by weight, then a Gaussian draw.

    Bit-reproducible given ``seed``: component selection and normal draws come
    from fixed substreams, and the draw layout does not depend on which
    components get selected.
    """
    n = int(n)
    if n < 1:
        raise ContractError(f"sample size must be >= 1, got {n}")
    u = substream(seed, 0).random(n)
    z = substream(seed, 1).standard_normal((n, mix.dim))
    cum = np.cumsum(mix.weights)
    idx = np.minimum(np.searchsorted(cum, u, side="right"), mix.k - 1)
    pts = np.empty((n, mix.dim))
    for i in range(mix.k):
        mask = idx == i
        if not np.any(mask):
            continue
        root = (mix._evecs[i] * np.sqrt(mix._evals[i])) @ mix._evecs[i].T
        pts[mask] = mix.means[i] + z[mask] @ root.T
    return ParticleEnsemble(pts, seed)


# -- Gaussian noise identity -----------------------------------------------------


def stein_residual(t: float, eps) -> np.ndarray:
    """Residual of the Gaussian identity ``-t grad nu_t(e) = e nu_t(e)``.

    ``nu_t = N(0, t I)``.  The gradient side is evaluated through the generic
    mixture gradient machinery and the right side through the density, so a
    nonzero residual would expose a defect in either; for Gaussian noise the
    residual is zero up to rounding.
    """
    t = float(t)
    if t <= 0.0:
        raise DomainError(f"noise variance must be strictly positive, got {t}")
    arr = np.asarray(eps, dtype=float)
    dim = 1 if arr.ndim == 0 else arr.shape[-1]
    noise = GaussianMixture.single(np.zeros(dim), t * np.eye(dim))
    pts, single = _as_points(eps, dim)
    grad = density_gradient(noise, pts)
    dens = density(noise, pts)
    res = -t * grad - pts * np.asarray(dens).reshape(-1, 1)
    return res[0] if single else res


# -- kernel density helpers -------------------------------------------------------


def silverman_covariance(points: np.ndarray, factor: float = 1.0) -> np.ndarray:
    """Silverman-style kernel covariance scaled by the sample covariance.

    Returns ``factor^2 * (4 / (m + 2))^(2 / (m + 4)) * n^(-2 / (m + 4)) * cov``.
    """
    pts = np.asarray(points, dtype=float)
    n, m = pts.shape
    if n < 2:
        raise ContractError("bandwidth selection needs at least two points")
    cov = np.atleast_2d(np.cov(pts.T, ddof=1))
    beta = (4.0 / (m + 2.0)) ** (2.0 / (m + 4.0)) * n ** (-2.0 / (m + 4.0))
    return (factor * factor) * beta * cov


def kde_log_density(data: np.ndarray, cov, x) -> np.ndarray:
    """Log density of the equal-weight Gaussian KDE with shared covariance.

    Vectorized over both data and evaluation points, unlike building an
    n-component :class:`GaussianMixture`.
    """
    data = np.asarray(data, dtype=float)
    n, m = data.shape
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    pts, single = _as_points(x, m)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 0.0:
        raise ContractError("kernel covariance must be positive definite")
    whiten = evecs / np.sqrt(evals)
    dw = data @ whiten
    pw = pts @ whiten
    d2 = np.sum(pw * pw, axis=1)[:, None] + np.sum(dw * dw, axis=1)[None, :] - 2.0 * (pw @ dw.T)
    log_norm = -0.5 * (m * _LOG_2PI + float(np.log(evals).sum()))
    out = _logsumexp(-0.5 * d2, axis=1) + log_norm - math.log(n)
    return float(out[0]) if single else out
