"""Stability of the one-step cavity solution: iteration (Jacobian chains)
and bug proliferation (products of diagonal propagation elements)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .numerics import RegressionResult, RngStream, linear_regression
from .popdyn import CavityParams, Population, popdyn_run, solve_t_tau

__all__ = [
    "StabilityReport",
    "ChainStatistics",
    "HeavyTailWarning",
    "DegeneratePopulation",
    "iteration_chain_sample",
    "sample_chains",
    "chain_statistics",
    "iteration_exponent",
    "mu_slope",
    "stability_report",
    "locate_alpha_s",
    "equilibrated_population",
]

ITERATION = 0
BUGS = 1
PHI_CAP = 700.0


class HeavyTailWarning(RuntimeWarning):
    pass


class DegeneratePopulation(ValueError):
    """All fields vanish, so every chain element is degenerate."""


@numba.njit(cache=True, inline="always")
def _lexpm1(x):
    if x > 30.0:
        return x + math.log1p(-math.exp(-x))
    if x <= 0.0:
        return -np.inf
    return math.log(math.expm1(x))


@numba.njit(cache=True, inline="always")
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _chains(phi, t, K, d_max, mode, u_atom, start, u_branch, counts, idx, out):
    """Fill ``out[n, d-1]`` with ln of the chain product up to length d.

    mode 0: Jacobians, branch chosen per step from ``u_branch``
    (< 1/2 opposite nature, else same nature).  mode 1: diagonal bug
    elements, always the opposite-nature branch.
    """
    n_chains = out.shape[0]
    pos = 0
    nx = 2 * (K - 1)
    for n in range(n_chains):
        f = 0.0 if u_atom[n] < t else phi[start[n]]
        acc = 0.0
        for d in range(d_max):
            xs = np.empty(nx)
            for j in range(nx):
                s = 0.0
                for _ in range(counts[n, d, j]):
                    s += phi[idx[pos]]
                    pos += 1
                xs[j] = s
            xp, xm = xs[0], xs[1]
            lnP = 0.0
            for i in range(1, K - 1):
                a, b = xs[2 * i], xs[2 * i + 1]
                la = _lexpm1(a)
                if la == -np.inf:
                    lnP = -np.inf
                    break
                dd = b - la
                lnP -= dd + math.log1p(math.exp(-dd)) if dd > 30.0 else math.log1p(math.exp(dd))
            lem = _lexpm1(xm)
            lnD = _logaddexp(xp, lem - f)  # ln[e^{x+} + (e^{x-} - 1) e^{-phi}]
            same = mode == 0 and u_branch[n, d] >= 0.5
            if mode == 1:
                lnv = -lnD + lnP
            elif not same:
                lnv = xp + xm - 2.0 * lnD + lnP
            else:
                lnv = xp + lem - 2.0 * lnD + lnP
            if not same:
                if xp + f > 0.0:
                    lr = xp + math.log1p(-math.exp(-(f + xp))) - lnD
                else:
                    lr = -np.inf
            else:
                lr = lem - f - lnD
            lq = lr + lnP
            if lq == -np.inf:
                f = 0.0
            else:
                q = math.exp(lq)
                f = PHI_CAP if q >= 1.0 else -math.log1p(-q)
                if f > PHI_CAP:
                    f = PHI_CAP
            acc += lnv
            out[n, d] = acc
    return pos


def _draw_block(pop: Population, params: CavityParams, d_max, n, stream: RngStream):
    K = pop.K
    counts = stream.poisson(params.gamma, (n, d_max, 2 * (K - 1))).astype(np.int64)
    idx = stream.integers(0, pop.N, int(counts.sum()))
    u_atom = stream.uniform(n)
    start = stream.integers(0, pop.N, n)
    u_branch = stream.uniform((n, d_max))
    return u_atom, start, u_branch, counts, idx


def sample_chains(pop: Population, params: CavityParams, d_max: int, samples: int, stream: RngStream,
                  mode: int = ITERATION, block: int = 4096) -> np.ndarray:
    """ln of chain products, shape (samples, d_max); column d-1 is length d.

    Field sums x are Poisson(gamma)-many population entries (the law with
    the atom at zero), the starting field is 0 with probability t.
    """
    if d_max < 1:
        raise ValueError("d_max must be at least 1")
    if not np.any(pop.phi > 0):
        raise DegeneratePopulation("population is identically zero")
    out = np.empty((samples, d_max))
    for lo in range(0, samples, block):
        n = min(block, samples - lo)
        u_atom, start, u_branch, counts, idx = _draw_block(pop, params, d_max, n, stream)
        _chains(pop.phi, params.t, pop.K, d_max, mode, u_atom, start, u_branch, counts, idx, out[lo : lo + n])
    return out


def iteration_chain_sample(K: int, pop: Population, params: CavityParams, d: int, stream: RngStream) -> float:
    """One Jacobian product T_1...T_d (d = 0 gives 1; NaN for a degenerate population)."""
    if d < 0:
        raise ValueError("d must be non-negative")
    if d == 0:
        return 1.0
    if pop.K != K:
        raise ValueError("population was built for a different K")
    try:
        ln = sample_chains(pop, params, d, 1, stream, ITERATION)
    except DegeneratePopulation:
        return float("nan")
    return float(math.exp(ln[0, -1]))


@dataclass
class ChainStatistics:
    d: np.ndarray
    log_mean: np.ndarray  # ln <X_d>
    stderr: np.ndarray
    top_share: float  # fraction of <X_dmax> carried by the top 1% of samples
    max_batch_share: float  # largest batch's share of the batch-mean sum
    heavy_tail: bool
    discarded: int
    samples: int
    jackknife_log_means: np.ndarray | None = None  # (batches, d) leave-one-batch-out ln means


def chain_statistics(log_values: np.ndarray, n_batches: int = 50, power: float = 1.0) -> ChainStatistics:
    """ln of the sample mean of exp(power * log_values) per column, with
    batch-means standard errors (delta method on the log)."""
    lv = power * np.asarray(log_values, dtype=float)
    ok = np.all(np.isfinite(lv) | (lv == -np.inf), axis=1) & ~np.any(np.isnan(lv), axis=1)
    discarded = int((~ok).sum())
    lv = lv[ok]
    n, dm = lv.shape
    nb = min(n_batches, n)
    if nb < 2:
        raise ValueError("too few samples for batch errors")
    shift = np.max(np.where(np.isfinite(lv), lv, -np.inf), axis=0)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    w = np.exp(lv - shift)
    mean = w.mean(axis=0)
    bounds = np.linspace(0, n, nb + 1).astype(int)
    bm = np.array([w[bounds[b] : bounds[b + 1]].mean(axis=0) for b in range(nb)])
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mean = np.log(mean) + shift
        stderr = bm.std(axis=0, ddof=1) / math.sqrt(nb) / mean
    last = np.sort(w[:, -1])[::-1]
    top = max(1, n // 100)
    tot = last.sum()
    top_share = float(last[:top].sum() / tot) if tot > 0 else float("nan")
    jack = np.log(np.maximum(bm.sum(axis=0) - bm, 0.0) / (nb - 1)) + shift
    bsum = bm[:, -1].sum()
    max_batch = float(bm[:, -1].max() / bsum) if bsum > 0 else float("nan")
    return ChainStatistics(
        d=np.arange(1, dm + 1),
        log_mean=log_mean,
        stderr=stderr,
        top_share=top_share,
        max_batch_share=max_batch,
        heavy_tail=bool(top_share > 0.5),
        discarded=discarded,
        samples=n,
        jackknife_log_means=jack,
    )


def _fit(stats: ChainStatistics, d_min: int = 1) -> RegressionResult:
    """Weighted line through ln <X_d>.  The points share their chains, so the
    slope error comes from a leave-one-batch-out jackknife rather than from
    the regression residuals."""
    m = (stats.d >= d_min) & np.isfinite(stats.log_mean)
    err = stats.stderr[m]
    w = None
    if np.all(np.isfinite(err)) and np.all(err > 0):
        w = 1.0 / err**2
    reg = linear_regression(np.column_stack([stats.d[m], stats.log_mean[m]]), w)
    jack = stats.jackknife_log_means
    if jack is None or not np.all(np.isfinite(jack[:, m])):
        return reg
    nb = jack.shape[0]
    fits = [linear_regression(np.column_stack([stats.d[m], row[m]]), w) for row in jack]
    slopes = np.array([f.slope for f in fits])
    icpts = np.array([f.intercept for f in fits])
    scale = (nb - 1) / nb
    return replace(
        reg,
        slope_stderr=float(math.sqrt(scale * ((slopes - slopes.mean()) ** 2).sum())),
        intercept_stderr=float(math.sqrt(scale * ((icpts - icpts.mean()) ** 2).sum())),
    )


def equilibrated_population(K: int, alpha: float, N: int, transient: int, stream: RngStream):
    """A population equilibrated at (K, alpha) and its cavity parameters."""
    params = solve_t_tau(K, alpha)
    run = popdyn_run(K, alpha, N, 0, transient, stream, measure=False, params=params)
    if run.collapsed:
        raise DegeneratePopulation(f"population collapses at K={K}, alpha={alpha}")
    return run.population, params


def _warn_tail(stats, what):
    if stats.heavy_tail:
        warnings.warn(
            f"{what}: top 1% of samples carry {stats.top_share:.0%} of the mean",
            HeavyTailWarning,
            stacklevel=3,
        )


def _iteration_fit(pop, params, d_max, samples, stream, n_batches):
    ln = sample_chains(pop, params, d_max, samples, stream, ITERATION)
    stats = chain_statistics(ln, n_batches, power=2.0)
    _warn_tail(stats, "iteration chains")
    reg = _fit(stats)
    K, alpha = params.K, params.alpha
    exponent = reg.slope + math.log(K * (K - 1) * alpha)
    return exponent, reg, stats


def _mu_fit(pop, params, d_max, samples, stream, n_batches):
    ln = sample_chains(pop, params, d_max, samples, stream, BUGS)
    stats = chain_statistics(ln, n_batches, power=1.0)
    _warn_tail(stats, "bug chains")
    K, alpha = params.K, params.alpha
    c = math.log(K * alpha * (K - 1) / 2.0)
    points = [(int(d), float(d * c + lm), float(e)) for d, lm, e in zip(stats.d, stats.log_mean, stats.stderr)]
    mu_stats = ChainStatistics(
        stats.d, stats.log_mean + stats.d * c, stats.stderr, stats.top_share,
        stats.max_batch_share, stats.heavy_tail, stats.discarded, stats.samples,
        stats.jackknife_log_means + stats.d * c,
    )
    return points, _fit(mu_stats), stats


def iteration_exponent(K: int, alpha: float, d_max: int = 20, samples: int = 100_000, N: int = 10_000,
                       transient: int = 100, seed: int = 0, n_batches: int = 50, return_details: bool = False):
    """Slope of ln <T_d^2> in d plus ln(K (K-1) alpha); negative means stable."""
    stream = RngStream(seed, 3)
    pop, params = equilibrated_population(K, alpha, N, transient, stream.child(0))
    exponent, reg, stats = _iteration_fit(pop, params, d_max, samples, stream.child(1), n_batches)
    if return_details:
        return exponent, reg, stats
    return exponent


def mu_slope(K: int, alpha: float, d_max: int = 20, samples: int = 100_000, N: int = 10_000,
             transient: int = 100, seed: int = 0, n_batches: int = 50, return_stats: bool = False):
    """Points (d, ln mu_d, stderr) and their linear fit; negative slope means stable."""
    stream = RngStream(seed, 4)
    pop, params = equilibrated_population(K, alpha, N, transient, stream.child(0))
    points, reg, stats = _mu_fit(pop, params, d_max, samples, stream.child(1), n_batches)
    if return_stats:
        return points, reg, stats
    return points, reg


@dataclass
class StabilityReport:
    K: int
    alpha: float
    d_max: int
    lambda_exponent: float
    lambda_stderr: float
    mu_points: list
    mu_slope: RegressionResult
    stable_iteration: bool
    stable_bugs: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "K": self.K,
            "alpha": self.alpha,
            "d_max": self.d_max,
            "lambda_exponent": self.lambda_exponent,
            "lambda_stderr": self.lambda_stderr,
            "mu_points": [list(p) for p in self.mu_points],
            "mu_slope": self.mu_slope.to_dict(),
            "stable_iteration": self.stable_iteration,
            "stable_bugs": self.stable_bugs,
            "diagnostics": self.diagnostics,
        }

    def mu_csv(self) -> str:
        rows = ["d,ln_mu,stderr"] + [f"{d},{m:.10g},{e:.10g}" for d, m, e in self.mu_points]
        return "\n".join(rows) + "\n"


def stability_report(K: int, alpha: float, d_max: int = 20, samples: int = 100_000, N: int = 10_000,
                     transient: int = 100, seed: int = 0, n_batches: int = 50) -> StabilityReport:
    """Both diagnostics on one equilibrated population."""
    stream = RngStream(seed, 5)
    pop, params = equilibrated_population(K, alpha, N, transient, stream.child(0))
    lam, lreg, lstats = _iteration_fit(pop, params, d_max, samples, stream.child(1), n_batches)
    points, mreg, mstats = _mu_fit(pop, params, d_max, samples, stream.child(2), n_batches)
    diag = {
        "iteration_top_share": lstats.top_share,
        "iteration_max_batch_share": lstats.max_batch_share,
        "iteration_heavy_tail": lstats.heavy_tail,
        "bugs_top_share": mstats.top_share,
        "bugs_max_batch_share": mstats.max_batch_share,
        "bugs_heavy_tail": mstats.heavy_tail,
        "discard_fraction": (lstats.discarded + mstats.discarded) / (2.0 * samples),
        "samples": samples,
        "N": N,
        "seed": seed,
    }
    return StabilityReport(
        K=K, alpha=alpha, d_max=d_max,
        lambda_exponent=float(lam), lambda_stderr=float(lreg.slope_stderr),
        mu_points=points, mu_slope=mreg,
        stable_iteration=bool(lam < 0), stable_bugs=bool(mreg.slope < 0),
        diagnostics=diag,
    )


def locate_alpha_s(K: int, alpha_grid, d_max: int = 20, samples: int = 100_000, N: int = 10_000,
                   transient: int = 100, seed: int = 0, n_batches: int = 50, workers: int = 1):
    """Zero crossing of the bug-proliferation slope, from a linear fit of
    slope against alpha.  Returns ``(alpha_s, stderr, [(alpha, slope, slope_err), ...])``."""
    from .thresholds import run_jobs

    grid = [float(a) for a in alpha_grid]
    jobs = [(K, a, d_max, samples, N, transient, seed + 7919 * i, n_batches) for i, a in enumerate(grid)]
    fits = run_jobs(_slope_job, jobs, workers)
    slopes = [(a, r.slope, r.slope_stderr) for a, r in zip(grid, fits)]
    s = np.array([v for _, v, _ in slopes])
    if not (np.any(s > 0) and np.any(s < 0)):
        raise ValueError("no sign change of the slope across the grid")
    err = np.array([e for _, _, e in slopes])
    w = 1.0 / err**2 if np.all(err > 0) else None
    reg = linear_regression([(a, v) for a, v, _ in slopes], w)
    return reg.root, reg.root_stderr, slopes


def _slope_job(K, alpha, d_max, samples, N, transient, seed, n_batches):
    return mu_slope(K, alpha, d_max, samples, N, transient, seed, n_batches)[1]
