"""Regularised cavity fixed point and population dynamics for the survey
distribution, with the Monte Carlo complexity estimate."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np
from scipy import optimize

from .numerics import RngStream, sample_zero_truncated_poisson

__all__ = [
    "CavityParams",
    "Population",
    "ComplexityEstimate",
    "ComplexityAccumulator",
    "PopdynRun",
    "solve_t_tau",
    "find_alpha_t",
    "popdyn_init",
    "popdyn_step",
    "popdyn_sweep",
    "estimate_complexity",
    "popdyn_run",
    "PHI_CAP",
]

PHI_CAP = 700.0
COLLAPSE_FACTOR = 1e-10


# ---------------------------------------------------------------------------
# (t, tau) fixed point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CavityParams:
    K: int
    alpha: float
    t: float
    tau: float
    gamma: float

    @property
    def trivial(self) -> bool:
        return self.gamma == 0.0

    def residual(self) -> float:
        r1 = self.t - (1.0 - (1.0 - self.tau) ** (self.K - 1))
        r2 = self.tau - math.exp(-0.5 * self.K * self.alpha * (1.0 - self.t))
        return max(abs(r1), abs(r2))


def _tau_gap(tau, K, alpha):
    # h(tau) - tau with h(tau) = exp(-(K alpha / 2) (1 - tau)^(K-1))
    return math.exp(-0.5 * K * alpha * (1.0 - tau) ** (K - 1)) - tau


def _smallest_tau_root(K, alpha):
    """Smallest root of h(tau) = tau in [0, 1), or None."""
    grid = np.linspace(0.0, 1.0, 4001)[:-1]
    vals = np.exp(-0.5 * K * alpha * (1.0 - grid) ** (K - 1)) - grid
    neg = np.flatnonzero(vals <= 0)
    if neg.size == 0:
        # the dip below zero may be narrower than the grid: refine at the minimum
        i = int(np.argmin(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(
            _tau_gap, bounds=(lo, hi), args=(K, alpha), method="bounded",
            options={"xatol": 1e-14},
        )
        if res.fun > 0:
            return None
        return optimize.brentq(_tau_gap, 0.0, res.x, args=(K, alpha), xtol=1e-15, rtol=1e-15)
    j = int(neg[0])
    if vals[j] == 0:
        return float(grid[j])
    return optimize.brentq(_tau_gap, grid[j - 1], grid[j], args=(K, alpha), xtol=1e-15, rtol=1e-15)


def solve_t_tau(K: int, alpha: float) -> CavityParams:
    """Solve t = 1 - (1 - tau)^(K-1), tau = exp(-(K alpha/2)(1 - t)).

    Returns the nontrivial solution with the smaller t when it exists, the
    trivial t = tau = 1 (gamma = 0) otherwise.
    """
    if K < 3 or alpha <= 0:
        raise ValueError("need K >= 3 and alpha > 0")
    tau = _smallest_tau_root(K, alpha)
    if tau is None:
        return CavityParams(K, alpha, 1.0, 1.0, 0.0)
    t = 1.0 - (1.0 - tau) ** (K - 1)
    gamma = 0.5 * K * alpha * (1.0 - t)
    return CavityParams(K, alpha, t, tau, gamma)


def find_alpha_t(K: int, tol: float = 1e-6) -> float:
    """Onset of the nontrivial (t, tau) solution, by bisection."""
    lo, hi = 0.01, 1.0
    while solve_t_tau(K, hi).trivial:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if solve_t_tau(K, mid).trivial:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Population and elementary update
# ---------------------------------------------------------------------------


@dataclass
class Population:
    K: int
    gamma: float
    phi: np.ndarray

    @property
    def N(self) -> int:
        return self.phi.size

    def mean(self) -> float:
        return float(self.phi.mean())

    def copy(self):
        return Population(self.K, self.gamma, self.phi.copy())


def popdyn_init(K: int, N: int, stream: RngStream, gamma: float = 0.0) -> Population:
    """i.i.d. exponential fields of mean 2^(1-K)."""
    if N < 1:
        raise ValueError("N must be positive")
    phi = stream.exponential(2.0 ** (1 - K), N)
    return Population(K, gamma, phi)


@numba.njit(cache=True, inline="always")
def _log_expm1(x):
    if x > 30.0:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


@numba.njit(cache=True)
def _run_steps(phi, K, kx, ky, idx, slots, out_x, out_y):
    """Sequential in-place updates; the randomness is pre-drawn.

    For each step, K-1 x's (sums of kx fields, law A) and K-1 y's (sums of
    ky fields, law B) are formed, then
        ln z = sum_j ln(1 + e^y / (e^x - 1)),  phi_0 = -ln(1 - e^{-ln z})
    replaces slot ``slots[s]``.  Returns the number of indices consumed.
    """
    n_steps = slots.shape[0]
    pos = 0
    for s in range(n_steps):
        lnz = 0.0
        zero_x = False
        for j in range(K - 1):
            x = 0.0
            for _ in range(kx[s, j]):
                x += phi[idx[pos]]
                pos += 1
            y = 0.0
            for _ in range(ky[s, j]):
                y += phi[idx[pos]]
                pos += 1
            out_x[s, j] = x
            out_y[s, j] = y
            if x <= 0.0:
                zero_x = True
                continue
            d = y - _log_expm1(x)
            if d > 30.0:
                lnz += d + math.log1p(math.exp(-d))
            else:
                lnz += math.log1p(math.exp(d))
        if zero_x:
            phi0 = 0.0
        elif lnz < 1e-300:
            phi0 = 700.0
        else:
            phi0 = -math.log(-math.expm1(-lnz))
            if phi0 > 700.0:
                phi0 = 700.0
        phi[slots[s]] = phi0
    return pos


def _draw_step_randomness(N, K, gamma, n_steps, stream):
    kx = sample_zero_truncated_poisson(stream, gamma, (n_steps, K - 1)).astype(np.int64)
    ky = stream.poisson(gamma, (n_steps, K - 1)).astype(np.int64)
    total = int(kx.sum() + ky.sum())
    idx = stream.integers(0, N, total)
    slots = stream.integers(0, N, n_steps)
    return kx, ky, idx, slots


def popdyn_sweep(pop: Population, params: CavityParams, stream: RngStream, n_steps=None):
    """``n_steps`` (default N) elementary updates; returns the (x, y)
    samples, each of shape (n_steps, K-1)."""
    if not params.gamma > 0:
        raise ValueError("population dynamics needs gamma > 0 (nontrivial t)")
    n_steps = pop.N if n_steps is None else n_steps
    K = pop.K
    kx, ky, idx, slots = _draw_step_randomness(pop.N, K, params.gamma, n_steps, stream)
    xs = np.empty((n_steps, K - 1))
    ys = np.empty((n_steps, K - 1))
    _run_steps(pop.phi, K, kx, ky, idx, slots, xs, ys)
    return xs, ys


def popdyn_step(pop: Population, params: CavityParams, stream: RngStream):
    """One update (steps 3-6).  Mutates ``pop`` and returns the K-1 sampled
    (x_j, y_j) pairs."""
    xs, ys = popdyn_sweep(pop, params, stream, n_steps=1)
    return pop, list(zip(xs[0].tolist(), ys[0].tolist()))


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------


@dataclass
class ComplexityEstimate:
    K: int
    alpha: float
    sigma_mean: float
    sigma_stderr: float
    sigma0_mean: float
    I_Km1_mean: float
    I_K_mean: float
    sample_count: int
    discarded: int = 0
    y_mean: float = float("nan")
    n_batches: int = 0

    def assembled(self) -> float:
        return self.sigma0_mean + self.alpha * (self.K * self.I_Km1_mean - (self.K - 1) * self.I_K_mean)

    def to_dict(self):
        return dict(self.__dict__)


def _leave_one_out(K):
    return np.array([[i for i in range(K) if i != j] for j in range(K)])


def _tuple_terms(y, K, alpha):
    """Per-tuple Sigma_0, I_{K-1}, I_K and Sigma from rows of 2K y-samples.

    Column pairs (2i, 2i+1) are the (x_i, z_i) of the integrals.  I_{K-1} is
    averaged over which pair is left out, so the ln(e^x + e^z - 1) parts
    cancel sample by sample in K I_{K-1} - (K-1) I_K.
    """
    x = y[:, 0::2]
    z = y[:, 1::2]
    hi = np.maximum(x, z)
    lo = np.minimum(x, z)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        L = hi + np.log1p(np.exp(lo - hi) - np.exp(-hi))
        lx = np.where(x > 30, x + np.log1p(-np.exp(-np.minimum(x, 700))), np.log(np.expm1(np.minimum(x, 30))))
        lzeta = -np.logaddexp(0.0, z - lx)  # ln[(e^x - 1)/(e^x + e^z - 1)], -inf for x == 0
        sl = lzeta.sum(axis=1)
        JK = np.log1p(-np.exp(sl))
        Jm = np.log1p(-np.exp(lzeta[:, _leave_one_out(K)].sum(axis=2))).mean(axis=1)
    Lsum = L.sum(axis=1)
    s0 = Lsum / K
    IK = Lsum + JK
    IKm1 = (K - 1) / K * Lsum + Jm
    sig = s0 + alpha * (K * IKm1 - (K - 1) * IK)
    ok = np.isfinite(s0) & np.isfinite(IK) & np.isfinite(IKm1)
    return s0, IKm1, IK, sig, ok


class ComplexityAccumulator:
    """Streaming estimator: feed y-samples in arrival order, chunk by chunk.

    Consecutive y's are grouped into 2K-tuples; a leftover partial tuple is
    carried into the next chunk.  Each chunk is credited to one batch.
    """

    def __init__(self, K: int, alpha: float, n_batches: int):
        self.K = K
        self.alpha = alpha
        self.n_batches = n_batches
        self.sums = np.zeros((n_batches, 4))
        self.counts = np.zeros(n_batches, dtype=np.int64)
        self.discarded = 0
        self._carry = np.empty(0)
        self._ysum = 0.0
        self._ycount = 0

    def add(self, y_samples, batch: int):
        y = np.concatenate([self._carry, np.ravel(y_samples)])
        self._ysum += float(np.sum(y_samples))
        self._ycount += int(np.size(y_samples))
        width = 2 * self.K
        n = y.size // width
        self._carry = y[n * width :].copy()
        if n == 0:
            return
        s0, ikm1, ik, sig, ok = _tuple_terms(y[: n * width].reshape(n, width), self.K, self.alpha)
        self.discarded += int((~ok).sum())
        self.sums[batch] += [s0[ok].sum(), ikm1[ok].sum(), ik[ok].sum(), sig[ok].sum()]
        self.counts[batch] += int(ok.sum())

    def result(self) -> ComplexityEstimate:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("no complexity samples collected")
        means = self.sums.sum(axis=0) / total
        s0, ikm1, ik = means[:3]
        sigma = s0 + self.alpha * (self.K * ikm1 - (self.K - 1) * ik)
        used = self.counts > 0
        bm = self.sums[used, 3] / self.counts[used]
        nb = int(used.sum())
        err = float(bm.std(ddof=1) / math.sqrt(nb)) if nb > 1 else float("nan")
        return ComplexityEstimate(
            K=self.K,
            alpha=self.alpha,
            sigma_mean=float(sigma),
            sigma_stderr=err,
            sigma0_mean=float(s0),
            I_Km1_mean=float(ikm1),
            I_K_mean=float(ik),
            sample_count=int(total),
            discarded=self.discarded,
            y_mean=self._ysum / self._ycount if self._ycount else float("nan"),
            n_batches=nb,
        )


def estimate_complexity(y_samples, K: int, alpha: float, n_batches: int = 20) -> ComplexityEstimate:
    """Sigma = Sigma_0 + alpha (K I_{K-1} - (K-1) I_K) from a flat sequence
    of B-distributed samples, with batch-means standard error."""
    y = np.ravel(np.asarray(y_samples, dtype=float))
    width = 2 * K
    n = y.size // width
    if n < n_batches:
        raise ValueError(f"{n} tuples are too few for {n_batches} batches")
    acc = ComplexityAccumulator(K, alpha, n_batches)
    bounds = np.linspace(0, n, n_batches + 1).astype(int) * width
    for b in range(n_batches):
        acc.add(y[bounds[b] : bounds[b + 1]], b)
    return acc.result()


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


class PopdynRun(NamedTuple):
    population: Population
    estimate: ComplexityEstimate | None
    collapsed: bool
    info: dict


def _moments(phi):
    return float(phi.mean()), float((phi * phi).mean())


def popdyn_run(
    K: int,
    alpha: float,
    N: int,
    T: int,
    transient_sweeps: int,
    stream: RngStream,
    max_transient_sweeps: int | None = None,
    n_batches: int = 20,
    measure: bool = True,
    params: CavityParams | None = None,
) -> PopdynRun:
    """Equilibrate for at least ``transient_sweeps`` sweeps of N updates
    (until the first two moments settle), then measure over T sweeps.

    ``collapsed`` is set as soon as the mean field drops below
    1e-10 * 2^(1-K); the trivial fixed point is absorbing so the run stops.
    """
    t0 = time.perf_counter()
    params = params or solve_t_tau(K, alpha)
    info = {
        "K": K, "alpha": alpha, "N": N, "T": T, "transient": transient_sweeps,
        "seed": stream.seed, "stream_id": stream.stream_id,
        "t": params.t, "gamma": params.gamma,
    }
    threshold = COLLAPSE_FACTOR * 2.0 ** (1 - K)
    pop = popdyn_init(K, N, stream, params.gamma)
    if params.trivial:
        pop.phi[:] = 0.0
        info.update(transient_done=0, runtime_seconds=time.perf_counter() - t0, mean_phi=0.0)
        return PopdynRun(pop, None, True, info)

    cap = max_transient_sweeps if max_transient_sweeps is not None else 5 * transient_sweeps
    history = []
    sweeps = 0
    collapsed = False
    while True:
        popdyn_sweep(pop, params, stream)
        sweeps += 1
        m1, m2 = _moments(pop.phi)
        history.append((m1, m2))
        if m1 < threshold:
            collapsed = True
            break
        if sweeps >= transient_sweeps and (_settled(history) or sweeps >= cap):
            break
    info["transient_done"] = sweeps

    est = None
    if not collapsed and measure:
        nb = min(n_batches, T)
        acc = ComplexityAccumulator(K, alpha, nb)
        for s in range(T):
            _, ys = popdyn_sweep(pop, params, stream)
            acc.add(ys, s * nb // T)
            if pop.phi.mean() < threshold:
                collapsed = True
                break
        if not collapsed:
            est = acc.result()
    elif not collapsed:
        for _ in range(T):
            popdyn_sweep(pop, params, stream)
            if pop.phi.mean() < threshold:
                collapsed = True
                break
    info["mean_phi"] = pop.mean()
    info["runtime_seconds"] = time.perf_counter() - t0
    return PopdynRun(pop, est, collapsed, info)


def _settled(history, window=10, rel=0.005):
    """Both moments, averaged over the last ``window`` checkpoints, moved by
    less than max(rel, 3 sigma of the checkpoint noise) against the previous
    window."""
    if len(history) < 2 * window:
        return False
    h = np.asarray(history[-2 * window :])
    prev, last = h[:window], h[window:]
    for k in range(2):
        a, b = prev[:, k].mean(), last[:, k].mean()
        noise = 3 * math.sqrt((prev[:, k].var() + last[:, k].var()) / window)
        if abs(b - a) > max(rel * abs(a), noise):
            return False
    return True


def run_record(run: PopdynRun) -> dict:
    """Flat JSON-ready record of one run."""
    rec = {k: run.info[k] for k in ("K", "alpha", "N", "T", "transient", "seed", "stream_id")}
    rec["collapsed"] = bool(run.collapsed)
    est = run.estimate
    rec.update(
        sigma_mean=est.sigma_mean if est else None,
        sigma_stderr=est.sigma_stderr if est else None,
        sigma0=est.sigma0_mean if est else None,
        I_Km1=est.I_Km1_mean if est else None,
        I_K=est.I_K_mean if est else None,
        mean_phi=run.info.get("mean_phi"),
        runtime_seconds=run.info.get("runtime_seconds"),
    )
    return rec
