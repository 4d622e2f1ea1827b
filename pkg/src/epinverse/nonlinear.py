"""Recursive-linearization EP for nonlinear F(x) = b with Barzilai-Borwein
step control.

Each outer iteration linearizes the forward map around the current mean,
runs the projection EP engine on the linearized Gaussian base plus the prior
sites, and moves the mean along the EP direction with a clamped BB step.
Sites are warm-started across outer iterations.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .ep import EPOptions, EPResult, Site, run_ep
from .errors import NonFiniteIterate
from .gaussians import NaturalGaussian


class ForwardModel(ABC):
    """A forward map F: R^n -> R^m with a Jacobian."""

    m: int
    n: int

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """F(x), shape (m,)."""

    @abstractmethod
    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """F'(x), shape (m, n)."""


class LinearModel(ForwardModel):
    """F(x) = A x (+ offset); its own Jacobian everywhere."""

    def __init__(self, A: np.ndarray, offset: np.ndarray | None = None):
        self.A = np.asarray(A, dtype=float)
        self.m, self.n = self.A.shape
        self.offset = np.zeros(self.m) if offset is None else np.asarray(offset, dtype=float)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.offset

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.A


@dataclass
class NonlinearOptions:
    alpha: float
    max_outer: int = 10
    outer_tol: float = 1e-3
    inner: EPOptions = field(default_factory=lambda: EPOptions(max_sweeps=5))
    floor: float | None = None  # componentwise admissibility floor for iterates

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class TraceRow:
    outer: int
    inner: int
    e_p_mu: float
    e_f_mu: float
    e_p_C: float
    e_f_C: float


@dataclass(frozen=True)
class OuterRecord:
    outer: int
    tau: float
    rel_mean_change: float
    inner_sweeps: int
    ep_converged: bool
    residual_norm: float


@dataclass
class NonlinearResult:
    mean: np.ndarray
    cov: np.ndarray
    outer_iters: int
    converged: bool
    trace: list[TraceRow]
    outer_records: list[OuterRecord]
    last_ep: EPResult


def linearize(model: ForwardModel, mu_k: np.ndarray, data: np.ndarray, alpha: float) -> NaturalGaussian:
    """Gaussian base of the linearized likelihood around mu_k:

        K0 = alpha J^T J  (PSD, possibly singular)
        h0 = alpha J^T (b - F(mu_k) + J mu_k)
    """
    J = model.jacobian(mu_k)
    r = data - model.evaluate(mu_k) + J @ mu_k
    K0 = alpha * (J.T @ J)
    return NaturalGaussian(alpha * (J.T @ r), 0.5 * (K0 + K0.T))


def bb_step(mu_k: np.ndarray, mu_km1: np.ndarray, d_k: np.ndarray, d_km1: np.ndarray) -> float:
    """Barzilai-Borwein step from successive iterates and EP directions,
    clamped to [0, 1].  Coincident iterates fall back to tau = 1."""
    s = mu_k - mu_km1
    ss = float(s @ s)
    if ss == 0.0:
        return 1.0
    tau = float(s @ (d_k - d_km1)) / ss
    return max(0.0, min(tau, 1.0))


def _effective_tau(mu_k, mu_km1, d_k, d_km1) -> float:
    """Driver step policy.  The clamped BB value is used when positive; a
    clamp to exactly zero means the local d-map slope is negative (the
    relinearized iteration is contracting or oscillating), where freezing the
    iterate would stall convergence.  There the classical BB magnitude
    -1/raw is used instead: it is 1 for linear problems and dead-beat damps a
    linear oscillation."""
    s = mu_k - mu_km1
    ss = float(s @ s)
    if ss == 0.0:
        return 1.0
    raw = float(s @ (d_k - d_km1)) / ss
    clamped = max(0.0, min(raw, 1.0))
    if clamped > 0.0:
        return clamped
    return min(1.0, -1.0 / raw) if raw < 0.0 else 1.0


def fd_directional(model: ForwardModel, x: np.ndarray, d: np.ndarray, eps: float) -> np.ndarray:
    """Central finite difference of F along direction d (Jacobian test helper)."""
    return (model.evaluate(x + eps * d) - model.evaluate(x - eps * d)) / (2.0 * eps)


def run_nonlinear(
    model: ForwardModel,
    data: np.ndarray,
    sites: list[Site],
    opts: NonlinearOptions,
    mu0: np.ndarray,
) -> NonlinearResult:
    """Outer loop: linearize -> run_ep -> BB step -> mean update.

    The first outer step uses tau = 1.  Iterates are projected onto the
    admissibility floor before each linearization.  Sites are warm-started
    from the previous outer iteration (updated in place by run_ep).

    Raises
    ------
    NonFiniteIterate
        If the mean leaves the admissible set irrecoverably (non-finite).
    """
    mu = np.asarray(mu0, dtype=float).copy()
    if opts.floor is not None:
        mu = np.maximum(mu, opts.floor)

    prev_mu = None
    prev_d = None
    ep_result = None
    outer_records: list[OuterRecord] = []
    mean_chain: list[np.ndarray] = []
    cov_chain: list[np.ndarray] = []
    chain_tags: list[tuple[int, int]] = []  # (outer, inner)
    converged = False
    outer_iters = 0

    for k in range(1, opts.max_outer + 1):
        outer_iters = k
        base = linearize(model, mu, data, opts.alpha)
        ep_result = run_ep(base, sites, opts.inner)
        if k == 1:
            mean_chain.append(ep_result.mean_history[0])
            cov_chain.append(ep_result.cov_history[0])
            chain_tags.append((1, 0))
        mean_chain.extend(ep_result.mean_history[1:])
        cov_chain.extend(ep_result.cov_history[1:])
        chain_tags.extend((k, j) for j in range(1, ep_result.sweeps_used + 1))

        mu_star = ep_result.mean
        d = mu_star - mu
        tau = 1.0 if prev_mu is None else _effective_tau(mu, prev_mu, d, prev_d)
        prev_mu, prev_d = mu.copy(), d
        mu_new = mu + tau * d
        if not np.all(np.isfinite(mu_new)):
            raise NonFiniteIterate(f"outer iterate {k} is not finite")
        if opts.floor is not None:
            mu_new = np.maximum(mu_new, opts.floor)
        rel_change = float(np.linalg.norm(mu_new - mu)) / max(float(np.linalg.norm(mu)), 1e-300)
        residual = float(np.linalg.norm(model.evaluate(mu_new) - data))
        mu = mu_new
        outer_records.append(
            OuterRecord(k, tau, rel_change, ep_result.sweeps_used, ep_result.converged, residual)
        )
        if rel_change < opts.outer_tol:
            converged = True
            break

    # Table-4 style trace: e_p against the previous iterate in the global
    # chain and e_f against the final iterate of the whole run.
    mu_fin = mean_chain[-1]
    C_fin = cov_chain[-1]
    trace = []
    for idx in range(1, len(mean_chain)):
        outer, inner = chain_tags[idx]
        e_p_mu = _rel(mean_chain[idx], mean_chain[idx - 1])
        e_f_mu = _rel(mean_chain[idx], mu_fin)
        e_p_C = _rel(cov_chain[idx], cov_chain[idx - 1])
        e_f_C = _rel(cov_chain[idx], C_fin)
        trace.append(TraceRow(outer, inner, e_p_mu, e_f_mu, e_p_C, e_f_C))

    return NonlinearResult(
        mean=mu,
        cov=ep_result.cov,
        outer_iters=outer_iters,
        converged=converged,
        trace=trace,
        outer_records=outer_records,
        last_ep=ep_result,
    )


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1e-300)
