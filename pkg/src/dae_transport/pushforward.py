"""Closed-form pushforward measures and abstract standard-deviation coordinates.

A Gaussian transported by the continuous flow keeps its mean and loses
``2 t I`` of covariance; transported by the one-shot denoising map it keeps
its mean and its covariance contracts to ``S (I + t S^{-1})^{-2}``.  Both are
exposed here together with empirical moments and the diagonal-Gaussian
coordinate chart ``(sigma_1, ..., sigma_m)`` in which the quadratic
Wasserstein distance is Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, SingularityError
from .measures import ParticleEnsemble

SOURCE_CONTINUOUS = "continuous"
SOURCE_ONE_SHOT = "one_shot"

_EIG_FLOOR = -1e-12  # permitted eigenvalue round-off at the singular boundary
_DIAG_TOL = 1e-9  # off-diagonal tolerance for the abstract chart


@dataclass(frozen=True, eq=False)
class GaussianPushforward:
    """A transported Gaussian: mean, covariance, source map, and time.

    The covariance may touch rank deficiency (zero eigenvalue) exactly at the
    singular time of the continuous flow; eigenvalues below ``-1e-12`` are
    rejected.
    """

    mean: np.ndarray
    covariance: np.ndarray
    source: str
    t: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = mean.shape[0]
        if cov.shape != (m, m):
            raise ContractError(f"covariance shape {cov.shape} does not match mean dimension {m}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ContractError("pushforward covariance must be symmetric")
        if self.source not in (SOURCE_CONTINUOUS, SOURCE_ONE_SHOT):
            raise ContractError(f"unknown pushforward source {self.source!r}")
        if float(self.t) < 0.0:
            raise ContractError("pushforward time must be nonnegative")
        evals = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        if float(evals[0]) < _EIG_FLOOR * scale:
            raise ContractError(
                f"pushforward covariance has eigenvalue {float(evals[0]):.3e} below the singular floor"
            )
        mean = mean.copy()
        cov = cov.copy()
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Covariance eigenvalues, ascending, with boundary round-off clipped to 0."""
        return np.clip(np.linalg.eigvalsh(self.covariance), 0.0, None)

    def __repr__(self) -> str:
        return f"GaussianPushforward(source={self.source!r}, t={self.t}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class AbstractPoint:
    """Per-axis standard deviations of a diagonal Gaussian."""

    sigma: np.ndarray

    def __post_init__(self):
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if sig.ndim != 1:
            raise ContractError("sigma must be a vector")
        if np.any(sig < 0.0) or not np.all(np.isfinite(sig)):
            raise ContractError("sigma entries must be finite and nonnegative")
        sig = sig.copy()
        sig.flags.writeable = False
        object.__setattr__(self, "sigma", sig)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


def _validated_spd(cov) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ContractError("covariance must be square")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise ContractError("covariance must be symmetric")
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if float(evals[0]) <= 0.0:
        raise ContractError("covariance must be positive definite")
    return cov, evals, evecs


def push_continuous(mean, cov, t: float) -> GaussianPushforward:
    """Pushforward of N(mean, cov) under the continuous flow: covariance ``cov - 2 t I``.

    Valid for ``2 t <= min eigenvalue``; the boundary is reported with a zero
    eigenvalue, while any later time raises :class:`SingularityError` carrying
    the critical time.
    """
    t = float(t)
    if t < 0.0:
        raise ContractError(f"time must be nonnegative, got {t}")
    cov, evals, _ = _validated_spd(cov)
    lam_min = float(evals[0])
    if 2.0 * t > lam_min + 1e-12:
        raise SingularityError(
            f"continuous pushforward is singular past t = {lam_min / 2.0!r} (requested t = {t!r})",
            critical_time=lam_min / 2.0,
        )
    new_cov = cov - 2.0 * t * np.eye(cov.shape[0]) if t > 0.0 else cov.copy()
    return GaussianPushforward(np.asarray(mean, dtype=float), new_cov, SOURCE_CONTINUOUS, t)


def one_shot_covariance(cov, t: float) -> np.ndarray:
    """Covariance of N(mean, cov) pushed through the one-shot map: ``cov (I + t cov^{-1})^{-2}``."""
    t = float(t)
    if t < 0.0:
        raise ContractError(f"time must be nonnegative, got {t}")
    cov, evals, evecs = _validated_spd(cov)
    if t == 0.0:
        return cov.copy()
    new_evals = evals**3 / (evals + t) ** 2
    return (evecs * new_evals) @ evecs.T


def push_one_shot(mean, cov, t: float) -> GaussianPushforward:
    """Pushforward of N(mean, cov) under the one-shot denoising map.

    The covariance contracts but stays positive definite for every finite t.
    """
    return GaussianPushforward(
        np.asarray(mean, dtype=float), one_shot_covariance(cov, t), SOURCE_ONE_SHOT, float(t)
    )


def empirical_moments(ens: ParticleEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased sample covariance of an ensemble (n >= 2)."""
    if ens.n < 2:
        raise ContractError(f"empirical moments need at least two points, got {ens.n}")
    mean = ens.points.mean(axis=0)
    cov = np.atleast_2d(np.cov(ens.points.T, ddof=1))
    return mean, cov


def abstract_coordinates(pf: GaussianPushforward) -> AbstractPoint:
    """Diagonal-Gaussian chart coordinates ``sigma_i = sqrt(cov_ii)``.

    Defined only for (numerically) diagonal covariances; anything else raises
    a :class:`DomainError` because the chart does not cover it.
    """
    cov = pf.covariance
    off = cov - np.diag(np.diag(cov))
    if np.max(np.abs(off)) > _DIAG_TOL:
        raise DomainError(
            f"abstract coordinates need a diagonal covariance (max off-diagonal {np.max(np.abs(off)):.3e})"
        )
    return AbstractPoint(np.sqrt(np.clip(np.diag(cov), 0.0, None)))


def w2_distance(a: AbstractPoint, b: AbstractPoint) -> float:
    """Quadratic Wasserstein distance between diagonal Gaussians: Euclidean in sigma."""
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.linalg.norm(a.sigma - b.sigma))
