"""Gaussian representations in moment and natural parameters, and the
product/quotient algebra the EP engine is built on.

The natural form (h, K) = (C^{-1} mu, C^{-1}) is the internal source of truth;
moment-form values handed to callers are always fresh copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import chol
from .chol import CholeskyFactor


@dataclass
class MomentGaussian:
    """Gaussian in moment parameters (mean, covariance)."""

    mu: np.ndarray
    C: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.C = np.asarray(self.C, dtype=float)

    @property
    def n(self) -> int:
        return self.mu.shape[0]


@dataclass
class NaturalGaussian:
    """Gaussian in natural parameters h = C^{-1} mu, K = C^{-1}.

    A Cholesky factor of K is cached and kept in sync by the EP engine's
    incremental rank-one updates.  The factor may be absent while K is only
    positive semidefinite (e.g. a linearized likelihood base before sites are
    multiplied in).
    """

    h: np.ndarray
    K: np.ndarray
    factor: CholeskyFactor | None = field(default=None)

    def __post_init__(self) -> None:
        self.h = np.asarray(self.h, dtype=float)
        self.K = np.asarray(self.K, dtype=float)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    def ensure_factor(self) -> CholeskyFactor:
        """Factor K if not already cached; raises NotPositiveDefinite otherwise."""
        if self.factor is None:
            self.factor = chol.cholesky(self.K)
        return self.factor

    def copy(self) -> "NaturalGaussian":
        return NaturalGaussian(self.h.copy(), self.K.copy(), self.factor)


def natural_from_moment(mg: MomentGaussian) -> NaturalGaussian:
    """Convert moment form to natural form."""
    F = chol.cholesky(mg.C)
    K = chol.inverse(F)
    return NaturalGaussian(K @ mg.mu, K, chol.cholesky(K))


def moment_from_natural(g: NaturalGaussian) -> MomentGaussian:
    """mu = K^{-1} h and C = K^{-1}, via the cached factor."""
    F = g.ensure_factor()
    mu = chol.solve(F, g.h)
    C = chol.inverse(F)
    return MomentGaussian(mu, C)


def natural_product(g: NaturalGaussian, h_add: np.ndarray, K_add: np.ndarray) -> NaturalGaussian:
    """Multiply in a Gaussian contribution: parameters add."""
    return NaturalGaussian(g.h + h_add, g.K + K_add)


def natural_quotient(
    g: NaturalGaussian, h_sub: np.ndarray, K_sub: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Divide out a Gaussian contribution, returning raw (h, K) parameters.

    The result may be indefinite (a cavity); validity is checked downstream,
    not here.
    """
    return g.h - h_sub, g.K - K_sub


def log_density_1d(x: np.ndarray, mu: float, var: float) -> np.ndarray:
    """log N(x; mu, var) for scalars or arrays."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mu) ** 2 / var)
