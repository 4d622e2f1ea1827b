"""Expectation propagation for Bayesian inverse problems.

A library and CLI implementing EP for posteriors of projection type, a
recursive-linearization driver for nonlinear forward maps, a 2D complete
electrode model (EIT) forward solver, and a random-walk Metropolis-Hastings
baseline with multi-chain diagnostics.
"""

from .chol import CholeskyFactor, cholesky, rank1_update, solve, woodbury_inverse
from .errors import (
    AdaptFailed,
    CavityInvalid,
    ConfigError,
    DegenerateSupport,
    DowndateFailed,
    EpinverseError,
    GlobalNotPD,
    MeshGenFailed,
    NonFiniteIterate,
    NotPositiveDefinite,
    QuadratureNotConverged,
    SingularSystem,
)
from .factors import (
    FactorFamily,
    GaussianFactor1D,
    GaussianFactorND,
    LaplacePositivityFactor,
    TiltedMoments,
    moments_gaussian_factor,
    moments_laplace_positivity,
    moments_quadrature,
)
from .ep import (
    CavityResult,
    EPOptions,
    EPResult,
    Site,
    SweepMetrics,
    assemble_global,
    cavity,
    project_moments,
    refresh_global,
    run_ep,
    update_site,
)
from .gaussians import (
    MomentGaussian,
    NaturalGaussian,
    moment_from_natural,
    natural_from_moment,
    natural_product,
    natural_quotient,
)

__all__ = [
    "AdaptFailed",
    "CavityInvalid",
    "CavityResult",
    "CholeskyFactor",
    "ConfigError",
    "EPOptions",
    "EPResult",
    "Site",
    "SweepMetrics",
    "assemble_global",
    "cavity",
    "project_moments",
    "refresh_global",
    "run_ep",
    "update_site",
    "DegenerateSupport",
    "DowndateFailed",
    "EpinverseError",
    "FactorFamily",
    "GaussianFactor1D",
    "GaussianFactorND",
    "GlobalNotPD",
    "LaplacePositivityFactor",
    "MeshGenFailed",
    "MomentGaussian",
    "NaturalGaussian",
    "NonFiniteIterate",
    "NotPositiveDefinite",
    "QuadratureNotConverged",
    "SingularSystem",
    "TiltedMoments",
    "cholesky",
    "moment_from_natural",
    "moments_gaussian_factor",
    "moments_laplace_positivity",
    "moments_quadrature",
    "natural_from_moment",
    "natural_product",
    "natural_quotient",
    "rank1_update",
    "solve",
    "woodbury_inverse",
]

__version__ = "0.1.0"
