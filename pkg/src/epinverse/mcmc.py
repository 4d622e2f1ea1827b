"""Random-walk Metropolis-Hastings baseline with multi-chain diagnostics.

Chains accumulate thinned post-burn-in means and variances in a single
streaming pass (no sample storage), are tuned to the 0.234 acceptance target
by a pilot-phase scalar search that is frozen before the measured run, and
are compared across seeds through the potential-scale-reduction statistic.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AdaptFailed


@dataclass
class ChainConfig:
    steps: int
    burn_in: int
    proposal_std: float | np.ndarray
    seed: int
    thin: int = 10
    target_acceptance: float = 0.234

    def __post_init__(self) -> None:
        if not self.burn_in < self.steps:
            raise ValueError("burn_in must be smaller than steps")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class ChainSummary:
    mean: np.ndarray
    std: np.ndarray
    acceptance_rate: float
    samples_kept: int
    seed: int

    @property
    def var(self) -> np.ndarray:
        return self.std**2


@dataclass(frozen=True)
class LaplacePositivityPrior:
    lam: float
    bg: np.ndarray | float
    floor: float


def log_posterior(sigma: np.ndarray, forward_fn, data: np.ndarray, alpha: float,
                  prior: LaplacePositivityPrior) -> float:
    """-alpha/2 ||F(sigma) - data||^2 - lam ||sigma - bg||_1 on the admissible
    set, -inf below the floor (encodes rejection)."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < prior.floor):
        return -math.inf
    r = forward_fn(sigma) - data
    return float(-0.5 * alpha * (r @ r) - prior.lam * np.sum(np.abs(sigma - prior.bg)))


class Posterior:
    """Picklable log-posterior callable (chains may run in worker processes)."""

    def __init__(self, forward_fn, data: np.ndarray, alpha: float, prior: LaplacePositivityPrior):
        self.forward_fn = forward_fn
        self.data = np.asarray(data, dtype=float)
        self.alpha = float(alpha)
        self.prior = prior

    def __call__(self, sigma: np.ndarray) -> float:
        return log_posterior(sigma, self.forward_fn, self.data, self.alpha, self.prior)


def mh_chain(cfg: ChainConfig, init: np.ndarray, log_post, store_samples: bool = False):
    """One random-walk chain with a symmetric Gaussian proposal.

    Burn-in is discarded and the thinned mean/variance accumulate in a single
    Welford pass.  Returns a ChainSummary, plus the thinned samples when
    store_samples is set.
    """
    x = np.asarray(init, dtype=float).copy()
    n = x.shape[0]
    lp = log_post(x)
    if not math.isfinite(lp):
        raise ValueError("initial state has zero posterior probability")
    std = np.broadcast_to(np.asarray(cfg.proposal_std, dtype=float), (n,))
    rng = np.random.default_rng(cfg.seed)

    kept = 0
    mean = np.zeros(n)
    m2 = np.zeros(n)
    accepted = 0
    samples = [] if store_samples else None

    block = 8192
    done = 0
    while done < cfg.steps:
        nb = min(block, cfg.steps - done)
        noise = rng.standard_normal((nb, n))
        logu = np.log(rng.random(nb))
        for j in range(nb):
            prop = x + std * noise[j]
            lp_new = log_post(prop)
            if logu[j] <= lp_new - lp:
                x = prop
                lp = lp_new
                accepted += 1
            step = done + j
            if step >= cfg.burn_in and (step - cfg.burn_in) % cfg.thin == 0:
                kept += 1
                delta = x - mean
                mean += delta / kept
                m2 += delta * (x - mean)
                if store_samples:
                    samples.append(x.copy())
        done += nb

    var = m2 / (kept - 1) if kept > 1 else np.zeros(n)
    summary = ChainSummary(
        mean=mean,
        std=np.sqrt(var),
        acceptance_rate=accepted / cfg.steps,
        samples_kept=kept,
        seed=cfg.seed,
    )
    if store_samples:
        return summary, np.asarray(samples)
    return summary


def adapt_proposal(
    log_post,
    init: np.ndarray,
    initial_std: float,
    *,
    pilot_steps: int = 2000,
    seed: int = 0,
    band: tuple[float, float] = (0.18, 0.30),
    max_pilots: int = 40,
) -> float:
    """Scalar proposal scale bringing the pilot acceptance into the band
    around 0.234: doubling/halving to bracket, then bisection on log scale.
    The returned scale is frozen for the measured run.

    Raises
    ------
    AdaptFailed
        If the band is not reached within max_pilots pilot chains.
    """
    lo, hi = band

    def acc(s: float, k: int) -> float:
        cfg = ChainConfig(steps=pilot_steps, burn_in=pilot_steps // 5, thin=1,
                          proposal_std=s, seed=seed * 1000003 + k)
        return mh_chain(cfg, init, log_post).acceptance_rate

    s = float(initial_std)
    a = acc(s, 0)
    used = 1
    if lo <= a <= hi:
        return s
    # acceptance decreases as the scale grows; bracket the band
    s_small = s_big = None  # scales with acceptance above hi / below lo
    while used < max_pilots:
        if a > hi:
            s_small = s
            s = s * 2.0 if s_big is None else math.sqrt(s * s_big)
        elif a < lo:
            s_big = s
            s = s / 2.0 if s_small is None else math.sqrt(s * s_small)
        a = acc(s, used)
        used += 1
        if lo <= a <= hi:
            return s
    raise AdaptFailed(f"acceptance {a:.3f} outside [{lo}, {hi}] after {max_pilots} pilots")


def run_chains(
    configs: list[ChainConfig],
    inits: list[np.ndarray],
    log_post,
    workers: int = 1,
) -> list[ChainSummary]:
    """Run independent chains, optionally in parallel processes (log_post must
    be picklable then, e.g. a Posterior instance)."""
    if len(configs) != len(inits):
        raise ValueError("one init per chain config required")
    if workers <= 1 or len(configs) == 1:
        return [mh_chain(cfg, x0, log_post) for cfg, x0 in zip(configs, inits)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(mh_chain, cfg, x0, log_post) for cfg, x0 in zip(configs, inits)]
        return [f.result() for f in futures]


def brooks_gelman(chains: list[ChainSummary]) -> np.ndarray:
    """Per-component potential scale reduction from chain means and
    within-chain variances:

        W = mean of within-chain variances
        B/n = variance of the chain means (ddof=1)
        Vhat = (n-1)/n W + (1 + 1/M) B/n
        Rhat = sqrt(max(1, Vhat / W))

    The clamp at 1 makes identical chains report exactly 1; diverged chains
    blow up through B.  Requires equal post-burn-in lengths.
    """
    if len(chains) < 2:
        raise ValueError("at least two chains are required")
    lengths = {c.samples_kept for c in chains}
    if len(lengths) != 1:
        raise ValueError("chains have unequal kept-sample counts")
    n = lengths.pop()
    M = len(chains)
    means = np.stack([c.mean for c in chains])
    within = np.stack([c.var for c in chains])
    W = within.mean(axis=0)
    B_over_n = means.var(axis=0, ddof=1)
    Vhat = (n - 1) / n * W + (1.0 + 1.0 / M) * B_over_n
    rhat = np.ones_like(W)
    pos = W > 0.0
    rhat[pos] = np.sqrt(np.maximum(1.0, Vhat[pos] / W[pos]))
    rhat[(~pos) & (B_over_n > 0.0)] = math.inf
    return rhat


@dataclass
class MultiChainReport:
    mean_err: float  # max over chains of ||mean_c - grand mean|| / ||grand mean||
    std_err: float
    rhat: np.ndarray
    rhat_max: float
    grand_mean: np.ndarray
    grand_std: np.ndarray
    acceptance_rates: list[float] = field(default_factory=list)


def multi_chain_report(chains: list[ChainSummary]) -> MultiChainReport:
    """Cross-chain accuracy metrics: maximum relative 2-norm error of each
    chain's mean and std from the cross-chain mean, plus the PSR statistic."""
    if len(chains) < 2:
        raise ValueError("at least two chains are required")
    means = np.stack([c.mean for c in chains])
    stds = np.stack([c.std for c in chains])
    # shifted-origin mean: exactly the first chain when all chains coincide
    grand_mean = means[0] + (means - means[0]).mean(axis=0)
    grand_std = stds[0] + (stds - stds[0]).mean(axis=0)
    mean_err = float(
        max(np.linalg.norm(m - grand_mean) for m in means) / max(np.linalg.norm(grand_mean), 1e-300)
    )
    std_err = float(
        max(np.linalg.norm(s - grand_std) for s in stds) / max(np.linalg.norm(grand_std), 1e-300)
    )
    rhat = brooks_gelman(chains)
    return MultiChainReport(
        mean_err=mean_err,
        std_err=std_err,
        rhat=rhat,
        rhat_max=float(np.max(rhat)),
        grand_mean=grand_mean,
        grand_std=grand_std,
        acceptance_rates=[c.acceptance_rate for c in chains],
    )


def overdispersed_inits(
    center: np.ndarray, scale: np.ndarray | float, n_chains: int, seed: int,
    floor: float = -math.inf,
) -> list[np.ndarray]:
    """Random overdispersed starting points, clipped to the admissible set."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    out = []
    for _ in range(n_chains):
        x0 = center + scale * rng.standard_normal(center.shape)
        if math.isfinite(floor):
            x0 = np.maximum(x0, floor)
        out.append(x0)
    return out
