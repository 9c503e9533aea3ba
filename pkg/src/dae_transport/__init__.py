"""Closed-form denoising transport for Gaussian mixtures.

Measures, one-shot and composed transport maps, pushforward measures, and a
verification suite for the flow identities they satisfy.
"""

from .errors import ContractError, DomainError, SingularityError
from .measures import (
    Estimate,
    GaussianMixture,
    ParticleEnsemble,
    convolve,
    density,
    density_gradient,
    entropy,
    kde_log_density,
    laplacian_density,
    log_density,
    renyi_entropy,
    sample,
    score,
    silverman_covariance,
    smooth,
    stein_residual,
)
from .pushforward import (
    AbstractPoint,
    GaussianPushforward,
    abstract_coordinates,
    empirical_moments,
    one_shot_covariance,
    push_continuous,
    push_one_shot,
    w2_distance,
)
from .transport import (
    AnalyticGaussian,
    DaeMap,
    EmpiricalKernel,
    FlowDiagnostics,
    FlowSchedule,
    MixtureExact,
    Trajectory,
    analytic_continuous_map,
    compose,
    continuous_flow,
    dae_apply,
    denoising_shift,
    one_shot_orbit,
)
from .verify import (
    EXPECTED_FAILURES,
    TOLERANCES,
    ResidualReport,
    check_backward_heat,
    check_continuity_t0,
    check_entropy_monotone,
    check_renyi_gradient_identity,
    check_stein_identity,
    check_time_reversal,
    check_variational_minimizer,
    default_checks,
    probe_lattice,
)

__version__ = "0.1.0"

__all__ = [
    "AbstractPoint",
    "AnalyticGaussian",
    "ContractError",
    "DaeMap",
    "DomainError",
    "EmpiricalKernel",
    "Estimate",
    "EXPECTED_FAILURES",
    "FlowDiagnostics",
    "FlowSchedule",
    "GaussianMixture",
    "GaussianPushforward",
    "MixtureExact",
    "ParticleEnsemble",
    "ResidualReport",
    "SingularityError",
    "TOLERANCES",
    "Trajectory",
    "abstract_coordinates",
    "analytic_continuous_map",
    "check_backward_heat",
    "check_continuity_t0",
    "check_entropy_monotone",
    "check_renyi_gradient_identity",
    "check_stein_identity",
    "check_time_reversal",
    "check_variational_minimizer",
    "compose",
    "continuous_flow",
    "convolve",
    "dae_apply",
    "default_checks",
    "denoising_shift",
    "density",
    "density_gradient",
    "empirical_moments",
    "entropy",
    "kde_log_density",
    "laplacian_density",
    "log_density",
    "one_shot_covariance",
    "one_shot_orbit",
    "probe_lattice",
    "push_continuous",
    "push_one_shot",
    "renyi_entropy",
    "sample",
    "score",
    "silverman_covariance",
    "smooth",
    "stein_residual",
    "w2_distance",
]
