"""Serial (and parallel-sweep) expectation propagation for posteriors of
projection type  t0(x) * prod_i t_i(U_i x).

The global Gaussian approximation is held in natural parameters (h, K) with a
maintained Cholesky factor of K; every site refresh is realized as rank-one
up/downdates of that factor plus an additive update of h.  Cavities are formed
in natural parameters so that exactly-flat cavities (decoupled factors) stay
well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import chol
from .errors import (
    CavityInvalid,
    DegenerateSupport,
    DowndateFailed,
    GlobalNotPD,
    NotPositiveDefinite,
)
from .factors import FactorFamily, TiltedMoments
from .gaussians import MomentGaussian, NaturalGaussian

# |cavity precision| below this fraction of the marginal precision is treated
# as exactly flat; below the negative of it, the cavity is invalid.
CAVITY_RTOL = 1e-12


@dataclass
class Site:
    """One factor approximation: projection U (l x n) and low-rank natural
    parameters (h_i, K_i), initialized to K_i = I, h_i = 0."""

    U: np.ndarray
    family: FactorFamily
    K_i: np.ndarray | None = None
    h_i: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        l = self.U.shape[0]
        if self.K_i is None:
            self.K_i = np.eye(l)
        else:
            self.K_i = np.atleast_2d(np.asarray(self.K_i, dtype=float)).copy()
        if self.h_i is None:
            self.h_i = np.zeros(l)
        else:
            self.h_i = np.atleast_1d(np.asarray(self.h_i, dtype=float)).copy()

    @property
    def l(self) -> int:
        return self.U.shape[0]


@dataclass(frozen=True)
class CavityResult:
    """Cavity in natural parameters: eta = Chat^{-1} mu_hat, prec = Chat^{-1}.

    A vanishing precision (flat cavity) is legal; mu_hat/C_hat accessors are
    only available when the cavity is proper.
    """

    eta: np.ndarray
    prec: np.ndarray
    is_flat: bool

    @property
    def mu_hat(self) -> np.ndarray:
        if self.is_flat:
            raise CavityInvalid("flat cavity has no mean")
        return np.linalg.solve(self.prec, self.eta)

    @property
    def C_hat(self) -> np.ndarray:
        if self.is_flat:
            raise CavityInvalid("flat cavity has no covariance")
        C = np.linalg.inv(self.prec)
        return 0.5 * (C + C.T)


@dataclass
class EPOptions:
    max_sweeps: int = 50
    site_tol: float = 1e-4
    sweep_mode: str = "serial"  # or "parallel"
    on_downdate_failure: str = "skip_site"  # or "abort"

    def __post_init__(self) -> None:
        if self.site_tol <= 0.0:
            raise ValueError("site_tol must be > 0")
        if self.sweep_mode not in ("serial", "parallel"):
            raise ValueError("sweep_mode must be 'serial' or 'parallel'")
        if self.on_downdate_failure not in ("skip_site", "abort"):
            raise ValueError("on_downdate_failure must be 'skip_site' or 'abort'")


@dataclass(frozen=True)
class SweepMetrics:
    sweep: int
    e_p_mu: float
    e_f_mu: float
    e_p_C: float
    e_f_C: float
    max_site_change: float


@dataclass(frozen=True)
class SkippedSite:
    sweep: int
    index: int
    reason: str


@dataclass
class EPResult:
    mean: np.ndarray
    cov: np.ndarray
    sweeps_used: int
    converged: bool
    metrics: list[SweepMetrics]
    skipped_sites: list[SkippedSite]
    mean_history: list[np.ndarray]
    cov_history: list[np.ndarray] | None  # per-sweep C (n <= 1000) or diagonals


def assemble_global(base: NaturalGaussian, sites: list[Site]) -> NaturalGaussian:
    """K = K0 + sum U_i^T K_i U_i, h = h0 + sum U_i^T h_i, freshly factored."""
    K = base.K.copy()
    h = base.h.copy()
    for s in sites:
        K += s.U.T @ s.K_i @ s.U
        h += s.U.T @ s.h_i
    K = 0.5 * (K + K.T)
    try:
        factor = chol.cholesky(K)
    except NotPositiveDefinite as exc:
        raise GlobalNotPD(str(exc)) from exc
    return NaturalGaussian(h, K, factor)


def cavity(global_: NaturalGaussian, s: Site) -> CavityResult:
    """Cavity natural parameters for one site.

    Khat = U K^{-1} U^T via triangular solves against the maintained factor;
    the cavity precision is Khat^{-1} - K_i and the cavity shift is
    Khat^{-1} U K^{-1} h - h_i.

    Raises
    ------
    CavityInvalid
        If the cavity precision is negative definite beyond roundoff.
    """
    F = global_.ensure_factor()
    W = chol.solve_lower(F, s.U.T)  # n x l
    y = chol.solve_lower(F, global_.h)
    Khat = W.T @ W
    marg_mean = W.T @ y  # = U K^{-1} h
    try:
        Kf = chol.cholesky(0.5 * (Khat + Khat.T))
    except NotPositiveDefinite as exc:
        raise CavityInvalid(f"marginal covariance not PD: {exc}") from exc
    marg_prec = chol.inverse(Kf)
    prec = marg_prec - s.K_i
    prec = 0.5 * (prec + prec.T)
    eta = marg_prec @ marg_mean - s.h_i

    scale = float(np.linalg.norm(marg_prec, 2))
    eigmin = float(np.linalg.eigvalsh(prec)[0])
    if eigmin < -CAVITY_RTOL * scale:
        raise CavityInvalid(f"cavity precision has eigenvalue {eigmin:.3e}")
    is_flat = bool(np.all(np.abs(prec) <= CAVITY_RTOL * scale))
    if is_flat:
        prec = np.zeros_like(prec)
    elif eigmin <= 0.0:
        # semidefinite but not uniformly flat: unusable for moment queries
        raise CavityInvalid("cavity precision is singular but not flat")
    return CavityResult(eta, prec, is_flat)


def site_moments(s: Site, cav: CavityResult) -> TiltedMoments:
    """Tilted moments of the site's factor against its cavity."""
    if cav.is_flat:
        if s.l != 1:
            raise CavityInvalid("flat cavity supported only for 1-d sites")
        return s.family.moments_flat(float(cav.eta[0]))
    if s.l == 1:
        v_hat = 1.0 / float(cav.prec[0, 0])
        m_hat = float(cav.eta[0]) * v_hat
        return s.family.moments(m_hat, v_hat)
    return s.family.moments(cav.mu_hat, cav.C_hat)


def update_site(s: Site, cav: CavityResult, tm: TiltedMoments) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched site parameters: K_i = Var^{-1} - Chat^{-1} and
    h_i = Var^{-1} mean - Chat^{-1} mu_hat.  The sign of K_i may be negative;
    that is resolved at the global refresh."""
    var = np.atleast_2d(np.asarray(tm.var, dtype=float))
    mean = np.atleast_1d(np.asarray(tm.mean, dtype=float))
    prec_new = chol.inverse(chol.cholesky(var))
    K_new = prec_new - cav.prec
    h_new = prec_new @ mean - cav.eta
    return 0.5 * (K_new + K_new.T), h_new


def refresh_global(
    global_: NaturalGaussian,
    s: Site,
    old: tuple[np.ndarray, np.ndarray],
    new: tuple[np.ndarray, np.ndarray],
) -> NaturalGaussian:
    """Move the global approximation from the old to the new site parameters.

    The precision delta U^T (K_new - K_old) U enters the maintained Cholesky
    factor through rank-one up/downdates (one per eigenvalue of the l x l
    delta; a single vector for l = 1), h additively.  Pure: returns a new
    global, never touching the input.

    Raises
    ------
    DowndateFailed
        If a downdate would lose positive definiteness (caller recovers).
    """
    K_old, h_old = old
    K_new, h_new = new
    dK = np.atleast_2d(K_new - K_old)
    dh = np.atleast_1d(h_new - h_old)
    if not dK.any() and not dh.any():
        return global_
    F = global_.ensure_factor()
    if s.l == 1:
        d = float(dK[0, 0])
        vecs = [] if d == 0.0 else [(math.copysign(1.0, d), s.U[0] * math.sqrt(abs(d)))]
    else:
        evals, evecs = np.linalg.eigh(dK)
        vecs = [
            (math.copysign(1.0, e), (s.U.T @ evecs[:, j]) * math.sqrt(abs(e)))
            for j, e in enumerate(evals)
            if e != 0.0
        ]
        vecs.sort(key=lambda t: -t[0])  # updates before downdates
    for sign, x in vecs:
        F = chol.rank1_update(F, x, +1 if sign > 0 else -1)
    K = global_.K + s.U.T @ dK @ s.U
    h = global_.h + s.U.T @ dh
    return NaturalGaussian(h, 0.5 * (K + K.T), F)


def project_moments(
    mu: np.ndarray,
    C: np.ndarray,
    U: np.ndarray,
    sbar: np.ndarray,
    Cbar: np.ndarray,
) -> MomentGaussian:
    """Lift tilted moments (sbar, Cbar) on s = U x to full-space moments:

        mu* = mu + C U^T (U C U^T)^{-1} (sbar - U mu)
        C*  = C + C U^T (U C U^T)^{-1} (Cbar - U C U^T) (U C U^T)^{-1} U C
    """
    mu = np.asarray(mu, dtype=float)
    C = np.asarray(C, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    sbar = np.atleast_1d(np.asarray(sbar, dtype=float))
    Cbar = np.atleast_2d(np.asarray(Cbar, dtype=float))
    M = U @ C @ U.T
    G = np.linalg.solve(M, U @ C).T  # C U^T M^{-1}
    mu_star = mu + G @ (sbar - U @ mu)
    C_star = C + G @ (Cbar - M) @ G.T
    return MomentGaussian(mu_star, 0.5 * (C_star + C_star.T))


def _rel_change(K_old, h_old, K_new, h_new) -> float:
    num = math.hypot(float(np.linalg.norm(K_new - K_old)), float(np.linalg.norm(h_new - h_old)))
    den = math.hypot(float(np.linalg.norm(K_old)), float(np.linalg.norm(h_old)))
    return num / max(den, 1e-12)


def _rel_diff(a, b) -> float:
    return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1e-300)


def run_ep(base: NaturalGaussian, sites: list[Site], opts: EPOptions | None = None) -> EPResult:
    """Sweep all sites until their parameters stop moving.

    Serial mode refreshes the global approximation after every site; parallel
    mode computes every site update from the same global snapshot and applies
    them in one reassembly.  Site parameters are updated in place (callers
    wanting a cold start should pass fresh sites).

    Raises
    ------
    GlobalNotPD
        If the assembled precision is not positive definite.
    """
    opts = opts or EPOptions()
    global_ = assemble_global(base, sites)
    n = global_.n
    keep_full_cov = n <= 1000

    def snapshot(g: NaturalGaussian):
        F = g.ensure_factor()
        mu = chol.solve(F, g.h)
        C = chol.inverse(F)
        return mu, C

    mu_prev, C_prev = snapshot(global_)
    mean_history = [mu_prev]
    cov_history = [C_prev if keep_full_cov else np.diag(C_prev).copy()]
    raw_metrics = []
    skipped: list[SkippedSite] = []
    converged = False
    sweeps_used = 0

    for sweep in range(1, opts.max_sweeps + 1):
        sweeps_used = sweep
        max_change = 0.0

        if opts.sweep_mode == "serial":
            for i, s in enumerate(sites):
                try:
                    cav = cavity(global_, s)
                    tm = site_moments(s, cav)
                    new_K, new_h = update_site(s, cav, tm)
                    cand = refresh_global(global_, s, (s.K_i, s.h_i), (new_K, new_h))
                except (CavityInvalid, DegenerateSupport, NotPositiveDefinite) as exc:
                    skipped.append(SkippedSite(sweep, i, f"{type(exc).__name__}: {exc}"))
                    continue
                except DowndateFailed as exc:
                    if opts.on_downdate_failure == "abort":
                        raise
                    skipped.append(SkippedSite(sweep, i, f"DowndateFailed: {exc}"))
                    continue
                global_ = cand
                max_change = max(max_change, _rel_change(s.K_i, s.h_i, new_K, new_h))
                s.K_i, s.h_i = new_K, new_h
        else:
            proposals: list[tuple[int, np.ndarray, np.ndarray]] = []
            for i, s in enumerate(sites):
                try:
                    cav = cavity(global_, s)
                    tm = site_moments(s, cav)
                    new_K, new_h = update_site(s, cav, tm)
                except (CavityInvalid, DegenerateSupport, NotPositiveDefinite) as exc:
                    skipped.append(SkippedSite(sweep, i, f"{type(exc).__name__}: {exc}"))
                    continue
                proposals.append((i, new_K, new_h))
            for i, new_K, new_h in proposals:
                s = sites[i]
                max_change = max(max_change, _rel_change(s.K_i, s.h_i, new_K, new_h))
                s.K_i, s.h_i = new_K, new_h
            global_ = assemble_global(base, sites)

        mu_j, C_j = snapshot(global_)
        e_p_mu = _rel_diff(mu_j, mu_prev)
        e_p_C = _rel_diff(C_j, C_prev)
        raw_metrics.append((sweep, e_p_mu, e_p_C, max_change))
        mean_history.append(mu_j)
        cov_history.append(C_j if keep_full_cov else np.diag(C_j).copy())
        mu_prev, C_prev = mu_j, C_j

        if max_change < opts.site_tol:
            converged = True
            break

    mu_final, C_final = mean_history[-1], cov_history[-1]
    metrics = [
        SweepMetrics(
            sweep=sw,
            e_p_mu=epm,
            e_f_mu=_rel_diff(mean_history[k + 1], mu_final),
            e_p_C=epc,
            e_f_C=_rel_diff(cov_history[k + 1], C_final),
            max_site_change=mc,
        )
        for k, (sw, epm, epc, mc) in enumerate(raw_metrics)
    ]
    cov = C_final if keep_full_cov else chol.inverse(global_.ensure_factor())
    return EPResult(
        mean=mean_history[-1],
        cov=cov,
        sweeps_used=sweeps_used,
        converged=converged,
        metrics=metrics,
        skipped_sites=skipped,
        mean_history=mean_history,
        cov_history=cov_history,
    )
