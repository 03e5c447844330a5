"""Deterministic fixed-point solver for the field law at small K.

Independent of the Monte Carlo code: the law of phi is carried as a CDF on
a fixed logarithmic grid, the compound-Poisson laws of x and y are formed
on a uniform lattice by FFT, and the law of -ln(zeta) is pushed through
the (K-1)-fold product by FFT convolution.
"""

import numpy as np
from scipy import fft


def _cdf_to_lattice(grid, cdf, h, n):
    """Masses at k*h (k = 0..n-1) from nearest-point rounding of the law."""
    edges = (np.arange(n + 1) - 0.5) * h
    edges[0] = 0.0
    F = np.interp(edges, grid, cdf, left=0.0, right=1.0)
    F[0] = 0.0
    F[-1] = 1.0
    return np.diff(F)


def _compound(p, gamma, m, truncated):
    ph = fft.rfft(p, m)
    if truncated:
        q = fft.irfft(np.expm1(gamma * ph) / np.expm1(gamma), m)
    else:
        q = fft.irfft(np.exp(gamma * (ph - 1.0)), m)
    q = np.maximum(q, 0.0)
    return q / q.sum()


def solve_field_law(K, gamma, n_grid=2000, h=0.01, n_lat=1500, m_fft=1 << 14,
                    hw=0.002, w_max=60.0, iters=400, tol=1e-9, init_mean=None):
    init_mean = 2.0 ** (1 - K) if init_mean is None else init_mean
    grid = np.concatenate([[0.0], np.geomspace(1e-9, 20.0, n_grid - 1)])
    cdf = 1.0 - np.exp(-grid / init_mean)
    nx = int(30.0 / h)
    xs = np.arange(nx) * h
    with np.errstate(divide="ignore"):
        lx = np.where(xs > 0, np.log(np.expm1(np.maximum(xs, 1e-300))), -np.inf)
    nw = int(w_max / hw)
    c = -np.log(-np.expm1(-np.maximum(grid[1:], 1e-300)))  # phi <= g  <=>  u >= c(g)
    for it in range(iters):
        p = _cdf_to_lattice(grid, cdf, h, n_lat)
        A = _compound(p, gamma, m_fft, True)[:nx]
        B = _compound(p, gamma, m_fft, False)[:nx]
        ka = np.flatnonzero(A > 1e-16)
        kb = np.flatnonzero(B > 1e-16)
        # w = -ln zeta = softplus(y - ln(e^x - 1))
        d = xs[kb][None, :] - lx[ka][:, None]
        w = np.logaddexp(0.0, d).ravel()
        mass = (A[ka][:, None] * B[kb][None, :]).ravel()
        w = np.where(np.isfinite(w), np.minimum(w, w_max), w_max)  # x = 0 gives zeta = 0
        idx = np.minimum((w / hw + 0.5).astype(np.int64), nw)  # last bin: beyond w_max
        pw = np.bincount(idx, weights=mass, minlength=nw + 1)
        over = pw[nw]
        pw = pw[:nw]
        L = 1 << int(np.ceil(np.log2(nw * (K - 1) + 1)))
        pu = np.maximum(fft.irfft(fft.rfft(pw, L) ** (K - 1), L), 0.0)
        tail = np.concatenate([np.cumsum(pu[::-1])[::-1], [0.0]])  # P(u >= j hw)
        j = np.minimum(np.ceil(c / hw - 0.5).astype(np.int64), L)
        j = np.maximum(j, 0)
        new = np.empty_like(cdf)
        new[0] = 0.0
        # mass with any w beyond w_max gives phi below e^-w_max: counted at phi >= 0
        new[1:] = tail[j] + (1.0 - (1.0 - over) ** (K - 1))
        new = np.minimum(np.maximum.accumulate(new), 1.0)
        diff = np.max(np.abs(new - cdf))
        cdf = new
        if diff < tol:
            break
    return grid, cdf, {"iterations": it + 1, "last_change": diff}


def ks_distance(samples, grid, cdf):
    s = np.sort(np.asarray(samples))
    n = s.size
    F = np.interp(s, grid, cdf)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(n) / n
    return float(max(np.max(hi - F), np.max(F - lo)))
