"""Large-K analysis: exact series coefficients in (K, ln 2), the moment
expansion of the cavity map and asymptotic formulas for the thresholds.

Notation: eps = 2^-K, alpha_hat = 2^-K alpha, L stands for ln 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import optimize

from .numerics import TruncatedSeries

__all__ = [
    "SeriesPolynomial",
    "MomentState",
    "ALPHA_HAT",
    "SIGMA2_COEFF",
    "c_coeffs",
    "d_taylor",
    "l_taylor",
    "moment_fixed_point",
    "moment_sigma",
    "moment_alpha_c",
    "alpha_c_series",
    "sigma_series2",
    "solve_z_simplified",
    "alpha_d_asymptotic",
    "alpha_s_asymptotic",
    "dstar",
    "reference_bounds",
    "largek_table",
]

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Exact polynomials in K and L = ln 2
# ---------------------------------------------------------------------------


class SeriesPolynomial:
    """Polynomial  sum c[i, j] K^i L^j  with rational coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        clean = {}
        for (i, j), c in (terms or {}).items():
            c = Fraction(c)
            if c != 0:
                clean[(int(i), int(j))] = c
        self.terms = clean

    @classmethod
    def K(cls):
        return cls({(1, 0): 1})

    @classmethod
    def L(cls):
        return cls({(0, 1): 1})

    @classmethod
    def const(cls, c):
        return cls({(0, 0): c})

    def _coerce(self, other):
        if isinstance(other, SeriesPolynomial):
            return other
        if isinstance(other, (int, Fraction)):
            return SeriesPolynomial.const(other)
        raise TypeError("only exact (int or Fraction) scalars are allowed")

    def __add__(self, other):
        o = self._coerce(other)
        out = dict(self.terms)
        for k, c in o.terms.items():
            out[k] = out.get(k, 0) + c
        return SeriesPolynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return SeriesPolynomial({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        out = {}
        for (i1, j1), c1 in self.terms.items():
            for (i2, j2), c2 in o.terms.items():
                k = (i1 + i2, j1 + j2)
                out[k] = out.get(k, 0) + c1 * c2
        return SeriesPolynomial(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = SeriesPolynomial.const(1)
        for _ in range(int(n)):
            out = out * self
        return out

    def __eq__(self, other):
        try:
            return self.terms == self._coerce(other).terms
        except TypeError:
            return NotImplemented

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def coefficient(self, i: int, j: int) -> Fraction:
        return self.terms.get((i, j), Fraction(0))

    def k_coefficient(self, i: int) -> "SeriesPolynomial":
        """The coefficient of K^i, a polynomial in L."""
        return SeriesPolynomial({(0, j): c for (a, j), c in self.terms.items() if a == i})

    @property
    def degree_K(self) -> int:
        return max((i for i, _ in self.terms), default=0)

    def __call__(self, K, L=LN2) -> float:
        return float(sum(float(c) * K**i * L**j for (i, j), c in self.terms.items()))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for (i, j), c in sorted(self.terms.items()):
            mono = "*".join(s for s in (f"K^{i}" if i else "", f"L^{j}" if j else "") if s)
            parts.append(f"({c})" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)


def _build_coefficients():
    K, L = SeriesPolynomial.K(), SeriesPolynomial.L()
    F = Fraction
    a1 = -(1 + L) * F(1, 2)
    a2 = F(1, 8) - L * F(1, 12) + (3 * L - 2) * F(1, 8) * K - (L + 2 * L**2) * F(1, 8) * K**2
    a3 = (
        F(1, 16)
        - L * F(1, 24)
        + (3 * L - 2) * F(1, 8) * K
        - (13 * L**2 - 3 * L + 1) * F(1, 8) * K**2
        + (14 * L**3 + 15 * L**2 - 4 * L) * F(1, 24) * K**3
        - (4 * L**3 + L**2) * F(1, 16) * K**4
    )
    return {1: a1, 2: a2, 3: a3}


#: exact alpha_hat_1..3 of  2^-K alpha_c = ln 2 + sum_i alpha_hat_i eps^i
ALPHA_HAT = _build_coefficients()
#: eps^2 coefficient of the second-order complexity
SIGMA2_COEFF = ALPHA_HAT[2]


def alpha_c_series(K: int, order: int) -> float:
    """2^K (ln 2 + sum_{i <= order} alpha_hat_i eps^i)."""
    if order not in (1, 2, 3):
        raise ValueError("only orders 1, 2 and 3 are available")
    eps = 2.0**-K
    s = LN2 + sum(ALPHA_HAT[i](K) * eps**i for i in range(1, order + 1))
    return 2.0**K * s


def sigma_series2(K: int, alpha_hat: float) -> float:
    """Complexity to second order in eps; depends on alpha_hat only through -alpha_hat."""
    eps = 2.0**-K
    return LN2 - alpha_hat + ALPHA_HAT[1](K) * eps + SIGMA2_COEFF(K) * eps**2


def reference_bounds(K: int):
    """Closed forms of the lower- and upper-bound asymptotics, without their
    remainders.  These are asymptotic shapes, not bounds at finite K."""
    eps = 2.0**-K
    lb = 2.0**K * (LN2 - eps * (0.5 * (K + 1) * LN2 + 1.0))
    ub = 2.0**K * (LN2 - eps * 0.5 * (1.0 + LN2))
    return lb, ub


# ---------------------------------------------------------------------------
# Taylor tables
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _c_table(n_max, l_max):
    C = [[Fraction(0)] * (l_max + 1) for _ in range(n_max + 1)]
    for l in range(1, l_max + 1):
        C[1][l] = Fraction(1, l)
    for n in range(2, n_max + 1):
        for l in range(n, l_max + 1):
            C[n][l] = sum((C[n - 1][l - p] / p for p in range(1, l)), Fraction(0))
    return tuple(tuple(row) for row in C)


def c_coeffs(n_max: int, l_max: int):
    """C[n][l] with ln^n(1/(1-x)) = sum_l C[n][l] x^l (exact; row/column 0 unused)."""
    if not (1 <= n_max <= 40 and 1 <= l_max <= 40):
        raise ValueError("n_max and l_max must lie in 1..40")
    return [list(row) for row in _c_table(n_max, l_max)]


def _xy(degree, Ey):
    X = TruncatedSeries.variable(0, 2, degree, at=Ey)
    Y = TruncatedSeries.variable(1, 2, degree, at=Ey)
    return X, Y


def _zeta_series(degree, Ey):
    X, Y = _xy(degree, Ey)
    ex = X.exp()
    return (ex - 1.0) / (ex + Y.exp() - 1.0)


def d_taylor(ell: int, p_max: int, q_max: int, Ey: float) -> np.ndarray:
    """D[p, q]: Taylor coefficients of ((e^x - 1)/(e^x + e^y - 1))^ell at x = y = Ey."""
    if p_max + q_max > 10:
        raise ValueError("p_max + q_max must not exceed 10")
    s = _zeta_series(p_max + q_max, Ey) ** int(ell)
    return s.coeffs[: p_max + 1, : q_max + 1].copy()


def l_taylor(p_max: int, q_max: int, Ey: float) -> np.ndarray:
    """L[p, q]: Taylor coefficients of ln(e^y + e^z - 1) at y = z = Ey."""
    if p_max + q_max > 10:
        raise ValueError("p_max + q_max must not exceed 10")
    Y, Z = _xy(p_max + q_max, Ey)
    s = (Y.exp() + Z.exp() - 1.0).log()
    return s.coeffs[: p_max + 1, : q_max + 1].copy()


# ---------------------------------------------------------------------------
# Moment expansion of the cavity map
# ---------------------------------------------------------------------------

_L_MAX = 40
_DEG = 8  # central moments up to b_4 on each of the two arguments


@dataclass
class MomentState:
    K: int
    alpha_hat: float
    Ey: float
    b2: float
    b3: float
    delta: float
    r: int
    M: tuple = field(default=())  # moments M_1..M_3 of the field law
    residual: float = float("nan")

    @property
    def gamma(self) -> float:
        return self.alpha_hat * self.K / (2.0 * 2.0**-self.K)

    def central(self) -> np.ndarray:
        """b_0..b_4 under the closure used (cumulants above order r set to 0)."""
        return _central(self.b2, 0.0 if self.r < 3 else self.b3)


def _central(b2, b3):
    b = np.zeros(_DEG // 2 + 1)
    b[0] = 1.0
    b[2] = b2
    b[3] = b3
    b[4] = 3.0 * b2 * b2
    return b


def _zeta_moments(Ey, b, l_max=_L_MAX):
    """E(zeta^l) for l = 1..l_max with x, y i.i.d. of mean Ey and central moments b."""
    z = _zeta_series(_DEG, Ey)
    out = np.empty(l_max + 1)
    out[0] = 1.0
    pw = TruncatedSeries.constant(1.0, 2, _DEG)
    n = len(b)
    w = np.outer(b, b)
    for l in range(1, l_max + 1):
        pw = pw * z
        out[l] = float((pw.coeffs[:n, :n] * w).sum())
    return out


def _cumulant_map(Ey, b2, K, alpha_hat, n_out=2):
    eps = 2.0**-K
    gamma = alpha_hat * K / (2.0 * eps)
    Ez = _zeta_moments(Ey, _central(b2, 0.0) if b2 > 0 else _central(0.0, 0.0))
    C = _c_table(3, _L_MAX)
    powK = np.maximum(Ez[1:], 0.0) ** (K - 1)
    M = [sum(float(C[n][l]) * powK[l - 1] for l in range(n, _L_MAX + 1)) for n in range(1, 4)]
    return gamma * np.array(M[:n_out]), M


def moment_fixed_point(K: int, alpha_hat: float, r: int = 2, tol: float = 1e-12, max_iter: int = 5000) -> MomentState:
    """Nontrivial fixed point of the closed moment map  b_hat_n = gamma
    sum_l C_{n,l} E(zeta^l)^(K-1), gamma = alpha_hat K / (2 eps), keeping
    cumulants up to order ``r`` (Gaussian closure for r = 2).

    Reliable for K >= 6; smaller K may converge but the closure is crude.
    """
    if r not in (1, 2):
        raise ValueError("truncation order r must be 1 or 2")
    eps = 2.0**-K
    Ey = alpha_hat * K
    b2 = 2.0 * alpha_hat * K * eps if r == 2 else 0.0
    res = float("inf")
    for _ in range(max_iter):
        try:
            out, M = _cumulant_map(Ey, b2, K, alpha_hat)
        except (OverflowError, ZeroDivisionError, ValueError) as exc:
            raise RuntimeError(f"moment map broke down at K={K}: {exc}") from None
        new_Ey = out[0]
        new_b2 = out[1] if r == 2 else 0.0
        res = max(abs(new_Ey - Ey), abs(new_b2 - b2))
        Ey, b2 = new_Ey, new_b2
        if res < tol * max(1.0, abs(Ey)):
            break
        if Ey < 1e-8:
            raise RuntimeError("moment map fell onto the trivial fixed point")
    else:
        raise RuntimeError(f"moment map did not converge (last change {res:.3e})")
    _, M = _cumulant_map(Ey, b2, K, alpha_hat)
    gamma = alpha_hat * K / (2.0 * eps)
    return MomentState(
        K=K, alpha_hat=alpha_hat, Ey=float(Ey), b2=float(b2), b3=float(gamma * M[2]),
        delta=math.exp(-Ey), r=r, M=tuple(float(m) for m in M), residual=float(res),
    )


def moment_sigma(state: MomentState, l_max: int = _L_MAX) -> float:
    """Complexity assembled from the moment pieces without expanding in eps:
    Sigma_0 = sum L_pq b_p b_q plus the exact l-series of the I-terms."""
    K, eps = state.K, 2.0**-state.K
    b = state.central()
    n = len(b)
    Lt = l_taylor(_DEG // 2, _DEG // 2, state.Ey)
    sigma0 = float((Lt[:n, :n] * np.outer(b, b)).sum())
    Ez = _zeta_moments(state.Ey, b, l_max)
    # alpha [K J_{K-1} - (K-1) J_K],  J_s = -sum_l E(zeta^l)^s / l
    acc = 0.0
    for l in range(1, l_max + 1):
        acc -= (K * Ez[l] ** (K - 1) - (K - 1) * Ez[l] ** K) / l
    return sigma0 + state.alpha_hat / eps * acc


def moment_alpha_c(K: int, r: int = 2) -> float:
    """Root in alpha of the moment-assembled complexity (no eps expansion)."""
    eps = 2.0**-K

    def f(ah):
        return moment_sigma(moment_fixed_point(K, ah, r))

    a0 = LN2 + ALPHA_HAT[1](K) * eps
    lo, hi = a0 - 0.05, a0 + 0.05
    return optimize.brentq(f, lo, hi, xtol=1e-14) * 2.0**K


# ---------------------------------------------------------------------------
# Simplified delta-function equation and asymptotics
# ---------------------------------------------------------------------------


def _f_simplified(z, K, gamma):
    w = (1.0 - z) / (2.0 - z)
    return (1.0 - w ** (K - 1)) ** gamma


def solve_z_simplified(K: int, gamma: float) -> float:
    """Smallest fixed point in (0, 1] of z = [1 - ((1-z)/(2-z))^(K-1)]^gamma."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    z = 1e-6
    for _ in range(200000):
        nz = _f_simplified(z, K, gamma)
        if abs(nz - z) < 1e-15:
            z = nz
            break
        z = nz
    if 1.0 - z < 1e-6:
        return 1.0
    # polish: the iterate approaches the root from below
    g = lambda u: _f_simplified(u, K, gamma) - u
    lo = z - 1e-6
    while lo > 0 and g(lo) <= 0:
        lo -= 1e-6
    hi = z + 1e-9
    if lo > 0 and g(lo) > 0 and g(hi) < 0:
        z = optimize.brentq(g, lo, hi, xtol=1e-16, rtol=1e-15)
    return float(z)


def _dstar_roots(K):
    """Real roots of e^d = (ln K + d)/2 as (smaller, larger), or None."""
    lk = math.log(K)
    h = lambda d: math.exp(d) - 0.5 * (lk + d)
    dmin = -LN2
    if h(dmin) > 0:
        return None
    hi = max(1.0, math.log(lk + 2.0) + 1.0)
    while h(hi) < 0:
        hi *= 2
    big = optimize.brentq(h, dmin, hi, xtol=1e-15, rtol=1e-15)
    lo = -lk - 1.0
    while h(lo) < 0:
        lo = 2 * lo - 1
    small = optimize.brentq(h, lo, dmin, xtol=1e-15, rtol=1e-15)
    return small, big


def dstar(K: float) -> float:
    """Larger solution of e^d = (ln K + d)/2 (the minimum of the threshold curve)."""
    roots = _dstar_roots(K)
    if roots is None:
        raise ValueError(f"e^d = (ln K + d)/2 has no real solution for K = {K} (needs K > 2e)")
    _, d = roots
    # safeguarded Newton polish
    lk = math.log(K)
    for _ in range(5):
        step = (math.exp(d) - 0.5 * (lk + d)) / (math.exp(d) - 0.5)
        d -= step
        if abs(step) < 1e-16:
            break
    return d


def alpha_d_asymptotic(K: int):
    """(d*, alpha_d) of the large-K clustering asymptotics."""
    d = dstar(K)
    return d, 2.0**K / K * (math.log(K) + d) * math.exp(0.5 * math.exp(-d))


def alpha_s_asymptotic(K: int):
    """(d_s, alpha_s): d_s is the larger root of e^d = ln K + d."""
    lk = math.log(K)
    h = lambda d: math.exp(d) - (lk + d)
    if h(0.0) > 0:
        raise ValueError(f"e^d = ln K + d has no real solution for K = {K}")
    hi = 1.0
    while h(hi) < 0:
        hi *= 2
    d = optimize.brentq(h, 0.0, hi, xtol=1e-15, rtol=1e-15)
    return d, 2.0**K / K * (lk + d) * math.exp(0.5 * math.exp(-d))


# ---------------------------------------------------------------------------
# Table
# ---------------------------------------------------------------------------


def largek_table(Ks, alpha_d_delta=None):
    """Rows {K, alpha_d_delta, alpha_d_asym, alpha_s_asym, alpha_c_r1..r3,
    UB_form, LB_form}; asymptotic entries are None where no root exists."""
    rows = []
    for K in Ks:
        lb, ub = reference_bounds(K)
        try:
            ad = alpha_d_asymptotic(K)[1]
        except ValueError:
            ad = None
        rows.append(
            {
                "K": int(K),
                "alpha_d_delta": alpha_d_delta(K) if alpha_d_delta else None,
                "alpha_d_asym": ad,
                "alpha_s_asym": alpha_s_asymptotic(K)[1],
                "alpha_c_r1": alpha_c_series(K, 1),
                "alpha_c_r2": alpha_c_series(K, 2),
                "alpha_c_r3": alpha_c_series(K, 3),
                "UB_form": ub,
                "LB_form": lb,
            }
        )
    return rows
