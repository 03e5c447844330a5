"""Threshold extraction: clustering onset from population collapse, the
satisfiability threshold as the root of Sigma(alpha), and the
delta-function approximation of the clustering threshold."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .numerics import RegressionResult, RngStream, linear_regression
from .popdyn import popdyn_run

__all__ = [
    "PopdynConfig",
    "ThresholdScan",
    "WindowRejected",
    "BracketError",
    "alpha_d_delta",
    "delta_map",
    "detect_alpha_d",
    "sigma_scan",
    "coarse_window",
    "locate_alpha_c",
    "run_jobs",
]


class WindowRejected(RuntimeError):
    pass


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class PopdynConfig:
    N: int = 10_000
    T: int = 100
    transient: int = 100
    n_batches: int = 20
    seed: int = 0
    workers: int = 1

    def to_dict(self):
        return dict(self.__dict__)


def run_jobs(fn, args, workers=1):
    """Map ``fn`` over ``args`` (independent jobs, order preserved)."""
    if workers == 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=workers)(delayed(fn)(*a) for a in args)


# ---------------------------------------------------------------------------
# Delta-function approximation
# ---------------------------------------------------------------------------


def delta_map(z, K, gamma):
    """f(z) = [1 - ((1 - z^a)/(1 + z^b - z^a))^(K-1)]^gamma with
    a = 1/(1 - e^-gamma), b = 1/(e^gamma - 1)."""
    lz = math.log(z)
    b = math.exp(-gamma) / -math.expm1(-gamma)
    a = 1.0 + b
    za = math.exp(a * lz)
    zb = math.exp(b * lz)
    w = (1.0 - za) / (1.0 + zb - za)
    return math.exp(gamma * math.log1p(-w ** (K - 1)))


def _log_map(u, lg, K):
    """ln f(e^u) for gamma = e^lg, written to stay accurate for large gamma."""
    gamma = math.exp(lg)
    b = math.exp(-gamma) / -math.expm1(-gamma)
    za = math.exp((1.0 + b) * u)
    zb = math.exp(b * u)
    w = (1.0 - za) / (1.0 + zb - za)
    return gamma * math.log1p(-w ** (K - 1))


def _log_slope(u, lg, K, h=1e-4):
    # d ln f / d ln z by Richardson-extrapolated central differences
    d1 = (_log_map(u + h, lg, K) - _log_map(u - h, lg, K)) / (2 * h)
    d2 = (_log_map(u + h / 2, lg, K) - _log_map(u - h / 2, lg, K)) / h
    return (4 * d2 - d1) / 3


def _simplified_critical(K):
    """Tangency point of z = [1 - ((1-z)/(2-z))^(K-1)]^gamma: minimum over z
    of gamma(z) = ln z / ln(1 - w^(K-1))."""

    def gz(z):
        w = (1.0 - z) / (2.0 - z)
        return math.log(z) / math.log1p(-w ** (K - 1))

    zs = np.linspace(1e-4, 1 - 1e-4, 2000)
    vals = [gz(z) for z in zs]
    i = int(np.argmin(vals))
    res = optimize.minimize_scalar(gz, bounds=(zs[max(i - 1, 0)], zs[min(i + 1, len(zs) - 1)]), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def _gamma_to_alpha(K, gamma):
    tau = math.exp(-gamma)
    t = 1.0 - (1.0 - tau) ** (K - 1)
    return 2.0 * gamma / (K * (1.0 - t))


def alpha_d_delta(K: int, tol: float = 1e-10, max_iter: int = 200, return_info: bool = False):
    """Clustering threshold of the delta-function approximation.

    Solves z = f(z), f'(z) = 1 in (ln z, ln gamma) with a damped Newton
    iteration (numerical Jacobian), seeded from the simplified tangency.
    """
    if K < 3:
        raise ValueError("K must be at least 3")
    z0, g0 = _simplified_critical(K)
    x = np.array([math.log(z0), math.log(g0)])

    def F(v):
        u, lg = v
        return np.array([_log_map(u, lg, K) - u, _log_slope(u, lg, K) - 1.0])

    r = F(x)
    converged = False
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            converged = True
            break
        J = np.empty((2, 2))
        for k in range(2):
            h = 1e-6 * max(1.0, abs(x[k]))
            e = np.zeros(2)
            e[k] = h
            J[:, k] = (F(x + e) - F(x - e)) / (2 * h)
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while lam > 1e-6:
            trial = x + lam * step
            try:
                rt = F(trial)
            except (ValueError, OverflowError):
                rt = None
            if rt is not None and trial[0] < 0 and np.max(np.abs(rt)) < np.max(np.abs(r)):
                x, r = trial, rt
                break
            lam /= 2
        else:
            break
    z, gamma = math.exp(x[0]), math.exp(x[1])
    alpha = _gamma_to_alpha(K, gamma)
    if not converged:
        raise RuntimeError(
            f"tangency solve did not converge for K={K}: last iterate z={z}, gamma={gamma}, "
            f"residual {np.max(np.abs(r)):.2e}"
        )
    if return_info:
        return alpha, {"z": z, "gamma": gamma, "residual": float(np.max(np.abs(r)))}
    return alpha


# ---------------------------------------------------------------------------
# Clustering onset from population collapse
# ---------------------------------------------------------------------------


def _collapses(K, alpha, cfg: PopdynConfig, seed, index):
    stream = RngStream(seed, 1).child(index)
    run = popdyn_run(K, alpha, cfg.N, cfg.T, cfg.transient, stream, measure=False)
    return bool(run.collapsed)


def _bisect_seed(K, cfg, lo, hi, resolution, seed):
    a, b = lo, hi
    if not _collapses(K, a, cfg, seed, 0):
        raise BracketError(f"population survives at the lower end {a}")
    if _collapses(K, b, cfg, seed, 1):
        raise BracketError(f"population collapses at the upper end {b}")
    step = 2
    while b - a > resolution:
        m = 0.5 * (a + b)
        if _collapses(K, m, cfg, seed, step):
            a = m
        else:
            b = m
        step += 1
    return 0.5 * (a + b)


def detect_alpha_d(K: int, cfg: PopdynConfig, bracket, resolution: float = 0.005, seeds=(0, 1, 2)):
    """Onset of a non-collapsing population, by bisection for each seed.

    Returns ``(mean, spread, per_seed)``; ``spread`` is the sample standard
    deviation across seeds (0 with a single seed).
    """
    lo, hi = bracket
    if not lo < hi:
        raise BracketError("bracket must be increasing")
    if len(seeds) < 1:
        raise ValueError("need at least one seed")

    per_seed = run_jobs(_bisect_seed, [(K, cfg, lo, hi, resolution, cfg.seed + s) for s in seeds], cfg.workers)
    per_seed = [float(v) for v in per_seed]
    spread = float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0
    return float(np.mean(per_seed)), spread, per_seed


# ---------------------------------------------------------------------------
# Sigma scans
# ---------------------------------------------------------------------------


@dataclass
class ThresholdScan:
    K: int
    grid: list  # (alpha, sigma_mean, sigma_stderr, collapsed)
    regression: RegressionResult | None
    alpha_c_estimate: float
    alpha_c_stderr: float
    config: dict = field(default_factory=dict)

    def used_points(self):
        return [(a, s, e) for a, s, e, c in self.grid if not c and math.isfinite(s)]

    def to_csv(self, header_lines=()) -> str:
        out = io.StringIO()
        for line in header_lines:
            out.write(f"# {line}\n")
        out.write("alpha,sigma,sigma_err,collapsed\n")
        for a, s, e, c in self.grid:
            out.write(f"{a:.10g},{s:.10g},{e:.10g},{int(bool(c))}\n")
        return out.getvalue()

    def to_dict(self):
        return {
            "K": self.K,
            "grid": [list(g) for g in self.grid],
            "regression": self.regression.to_dict() if self.regression else None,
            "alpha_c_estimate": self.alpha_c_estimate,
            "alpha_c_stderr": self.alpha_c_stderr,
            "config": self.config,
        }


def _scan_point(K, alpha, cfg: PopdynConfig, seed, index):
    stream = RngStream(seed, 2).child(index)
    run = popdyn_run(K, alpha, cfg.N, cfg.T, cfg.transient, stream, n_batches=cfg.n_batches)
    if run.collapsed or run.estimate is None:
        return (float(alpha), float("nan"), float("nan"), True)
    e = run.estimate
    return (float(alpha), e.sigma_mean, e.sigma_stderr, False)


def fit_scan(K, grid, config=None) -> ThresholdScan:
    """Weighted regression of Sigma on alpha over the non-collapsed points."""
    if sum(1 for g in grid if g[3]) * 2 >= len(grid):
        raise WindowRejected(f"{sum(1 for g in grid if g[3])} of {len(grid)} points collapsed")
    pts = [(a, s, e) for a, s, e, c in grid if not c and math.isfinite(s)]
    arr = np.array(pts)
    err = arr[:, 2]
    w = 1.0 / np.where(err > 0, err, np.min(err[err > 0]) if np.any(err > 0) else 1.0) ** 2
    reg = linear_regression(arr[:, :2], w)
    return ThresholdScan(K, [tuple(g) for g in grid], reg, reg.root, reg.root_stderr, dict(config or {}))


def sigma_scan(K: int, alpha_lo: float, alpha_hi: float, points: int = 50, cfg: PopdynConfig = PopdynConfig(),
               run_index: int = 0) -> ThresholdScan:
    """One population-dynamics run per grid point and a weighted linear fit."""
    if points < 2 or not alpha_lo < alpha_hi:
        raise ValueError("need at least two points on an increasing window")
    alphas = np.linspace(alpha_lo, alpha_hi, points)
    seed = cfg.seed + 1000 * run_index
    grid = run_jobs(_scan_point, [(K, float(a), cfg, seed, i) for i, a in enumerate(alphas)], cfg.workers)
    conf = cfg.to_dict()
    conf.update(alpha_lo=alpha_lo, alpha_hi=alpha_hi, points=points, run_index=run_index)
    return fit_scan(K, grid, conf)


def coarse_window(K: int, cfg: PopdynConfig = PopdynConfig(), points: int = 10, width: float | None = None):
    """Bracket the Sigma root with a coarse scan over [1.05, 1.35] alpha_d^(0).

    Returns a window centered on the coarse root, of total ``width``
    (default 5% of the root).
    """
    ad0 = alpha_d_delta(K)
    scan = sigma_scan(K, 1.05 * ad0, 1.35 * ad0, points, cfg, run_index=999)
    root = scan.alpha_c_estimate
    w = width if width is not None else 0.05 * root
    return root - w / 2, root + w / 2


def locate_alpha_c(K: int, cfg: PopdynConfig = PopdynConfig(), runs: int = 5, window=None, points: int = 50):
    """Mean root over independent scans and twice their sample standard deviation.

    Returns ``(alpha_c, two_sigma, scans)``.
    """
    if runs < 3:
        raise ValueError("need at least three runs")
    lo, hi = window if window is not None else coarse_window(K, cfg)
    scans = [sigma_scan(K, lo, hi, points, cfg, run_index=r) for r in range(runs)]
    roots = np.array([s.alpha_c_estimate for s in scans])
    return float(roots.mean()), float(2 * roots.std(ddof=1)), scans
