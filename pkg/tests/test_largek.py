import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksat_cavity.largek import (
    ALPHA_HAT,
    SIGMA2_COEFF,
    SeriesPolynomial,
    alpha_c_series,
    alpha_d_asymptotic,
    alpha_s_asymptotic,
    c_coeffs,
    d_taylor,
    dstar,
    l_taylor,
    largek_table,
    moment_fixed_point,
    moment_sigma,
    reference_bounds,
    sigma_series2,
    solve_z_simplified,
)
from ksat_cavity.thresholds import alpha_d_delta

LN2 = math.log(2.0)
Kp, Lp = SeriesPolynomial.K(), SeriesPolynomial.L()


# -- exact polynomials --------------------------------------------------------


def test_first_coefficient():
    assert ALPHA_HAT[1] == -(1 + Lp) * Fraction(1, 2)
    assert ALPHA_HAT[1](10) == pytest.approx(-(1 + LN2) / 2, rel=1e-15)


def test_second_coefficient_terms():
    a2 = ALPHA_HAT[2]
    assert a2.coefficient(0, 0) == Fraction(1, 8)
    assert a2.coefficient(0, 1) == Fraction(-1, 12)
    assert a2.coefficient(1, 0) == Fraction(-1, 4)
    assert a2.coefficient(1, 1) == Fraction(3, 8)
    assert a2.coefficient(2, 1) == Fraction(-1, 8)
    assert a2.coefficient(2, 2) == Fraction(-1, 4)


def test_third_coefficient_leading_terms():
    a3 = ALPHA_HAT[3]
    assert a3.coefficient(4, 3) == Fraction(-1, 4)
    assert a3.coefficient(4, 2) == Fraction(-1, 16)
    assert a3.coefficient(3, 3) == Fraction(7, 12)
    assert a3.coefficient(0, 0) == Fraction(1, 16)


@pytest.mark.parametrize("i", [1, 2, 3])
def test_degree_in_k(i):
    assert ALPHA_HAT[i].degree_K == 2 * i - 2


def test_coefficients_are_rational():
    for p in ALPHA_HAT.values():
        assert all(isinstance(c, Fraction) for c in p.terms.values())


@given(
    a=st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), st.fractions(max_denominator=50), max_size=4),
    b=st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), st.fractions(max_denominator=50), max_size=4),
    K=st.integers(3, 20),
)
@settings(max_examples=50, deadline=None)
def test_polynomial_ring_evaluation(a, b, K):
    pa, pb = SeriesPolynomial(a), SeriesPolynomial(b)
    assert (pa * pb)(K) == pytest.approx(pa(K) * pb(K), rel=1e-9, abs=1e-9)
    assert (pa + pb)(K) == pytest.approx(pa(K) + pb(K), rel=1e-9, abs=1e-9)
    assert pa * pb == pb * pa
    assert (pa - pa) == SeriesPolynomial.const(0)


def test_sigma_coefficient_is_second_order_term():
    assert SIGMA2_COEFF == ALPHA_HAT[2]


# -- series ---------------------------------------------------------------------


@pytest.mark.parametrize("K,expected", [(3, "4.699"), (4, "10.244"), (5, "21.334"), (10, "708.936")])
def test_first_order_series(K, expected):
    assert f"{alpha_c_series(K, 1):.3f}" == expected


def test_second_order_series_k3():
    K = 3
    e = Fraction(1, 8)
    L = LN2
    a2 = float(Fraction(1, 8) - Fraction(2 * K, 8)) + L * (-1 / 12 + 3 * K / 8 - K**2 / 8) - L**2 * K**2 / 4
    a1 = -(1 + L) / 2
    ref = 8 * (L + a1 * float(e) + a2 * float(e) ** 2)
    assert alpha_c_series(3, 2) == pytest.approx(ref, rel=1e-14)


def test_series_order_checked():
    with pytest.raises(ValueError):
        alpha_c_series(3, 4)


@pytest.mark.parametrize("K", range(6, 15))
def test_sigma_series_root(K):
    e = 2.0**-K
    root = LN2 + ALPHA_HAT[1](K) * e + ALPHA_HAT[2](K) * e**2
    assert abs(sigma_series2(K, root)) < 10 * e**3


@pytest.mark.parametrize("K", range(6, 15))
def test_sigma_series_at_ln2(K):
    e = 2.0**-K
    assert abs(sigma_series2(K, LN2) + (1 + LN2) / 2 * e) < 2 * K**2 * e**2


@given(K=st.integers(3, 30), a=st.floats(0.5, 0.8), h=st.floats(1e-4, 1e-2))
@settings(max_examples=30, deadline=None)
def test_sigma_series_slope(K, a, h):
    assert (sigma_series2(K, a + h) - sigma_series2(K, a)) / h == pytest.approx(-1.0, rel=1e-8)


def test_upper_form_k10():
    _, ub = reference_bounds(10)
    assert ub == pytest.approx(2**10 * (LN2 - 2**-10 * (1 + LN2) / 2), rel=1e-15)


@pytest.mark.parametrize("K", range(3, 31))
def test_bound_forms(K):
    lb, ub = reference_bounds(K)
    assert ub == pytest.approx(alpha_c_series(K, 1), rel=1e-15)
    assert lb < ub


# -- Taylor tables --------------------------------------------------------------


def test_c_examples():
    C = c_coeffs(3, 5)
    assert C[1][5] == Fraction(1, 5)
    assert C[3][3] == 1
    assert C[2][3] == 1


def test_c_identities():
    C = c_coeffs(39, 40)
    for n in range(1, 40):
        assert C[n][n] == 1
        assert C[n][n + 1] == Fraction(n, 2)
        assert all(C[n][l] == 0 for l in range(1, n))


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_c_generating_function(n):
    C = c_coeffs(n, 40)
    x = 0.1
    series = sum(float(C[n][l]) * x**l for l in range(1, 41))
    assert series == pytest.approx((-math.log1p(-x)) ** n, rel=1e-14)


def test_c_bounds():
    with pytest.raises(ValueError):
        c_coeffs(41, 10)


@pytest.mark.parametrize("Ey", [0.5, 2.0, 6.0])
@pytest.mark.parametrize("ell", [1, 2, 5, 9])
def test_d_constant_term(Ey, ell):
    d = math.exp(-Ey)
    assert d_taylor(ell, 2, 2, Ey)[0, 0] == pytest.approx(((1 - d) / (2 - d)) ** ell, rel=1e-12)


@pytest.mark.parametrize("ell", [1, 2, 3, 6])
def test_d_second_order_limit(ell):
    D = d_taylor(ell, 2, 2, 40.0)
    assert D[2, 0] + D[0, 2] == pytest.approx(2.0**-ell * ell * (ell - 1) / 4, abs=1e-12)


def _zeta(x, y, ell):
    return ((math.exp(x) - 1) / (math.exp(x) + math.exp(y) - 1)) ** ell


@pytest.mark.parametrize("p,q", [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)])
def test_d_finite_differences(p, q):
    ell, E, h = 3, 1.2, 1e-3
    D = d_taylor(ell, 3, 3, E)

    def deriv(f, p, q):
        # central differences, orders up to 2 in each argument
        cx = {0: [(0, 1)], 1: [(1, 0.5 / h), (-1, -0.5 / h)], 2: [(1, 1 / h**2), (0, -2 / h**2), (-1, 1 / h**2)]}
        return sum(a * b * f(E + i * h, E + j * h) for i, a in cx[p] for j, b in cx[q])

    fd = deriv(lambda x, y: _zeta(x, y, ell), p, q) / (math.factorial(p) * math.factorial(q))
    assert D[p, q] == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("Ey", [0.7, 2.0, 5.0, 9.0])
def test_l_closed_forms(Ey):
    d = math.exp(-Ey)
    L = l_taylor(4, 4, Ey)
    assert L[0, 0] == pytest.approx(math.log(2 * math.exp(Ey) - 1), abs=1e-12)
    assert L[0, 2] + L[2, 0] == pytest.approx((1 - d) / (2 - d) ** 2, abs=1e-12)
    assert L[2, 2] == pytest.approx(-(2 + d * d) / (4 * (2 - d) ** 4), abs=1e-12)
    # direct differentiation gives a cubed denominator here
    assert L[0, 3] + L[3, 0] == pytest.approx(-(1 - d) * d / (3 * (2 - d) ** 3), abs=1e-12)
    r = 1 / (2 - d)
    assert L[0, 4] + L[4, 0] == pytest.approx((r - 7 * r**2 + 12 * r**3 - 6 * r**4) / 12, abs=1e-12)


def test_l_large_field_limits():
    L = l_taylor(4, 4, 40.0)
    assert L[0, 0] - 40.0 == pytest.approx(LN2, abs=1e-12)
    assert L[0, 2] + L[2, 0] == pytest.approx(0.25, abs=1e-12)
    assert L[2, 2] == pytest.approx(-1 / 32, abs=1e-12)
    assert L[0, 4] + L[4, 0] == pytest.approx(-1 / 96, abs=1e-12)


def test_l_small_delta_expansion():
    for Ey in (8.0, 10.0, 12.0):
        d = math.exp(-Ey)
        L00 = l_taylor(1, 1, Ey)[0, 0]
        assert abs(L00 - (LN2 + Ey - d / 2 - d * d / 8)) < 2 * d**3


def test_taylor_order_cap():
    with pytest.raises(ValueError):
        d_taylor(2, 6, 5, 1.0)
    with pytest.raises(ValueError):
        l_taylor(6, 5, 1.0)


# -- moment expansion -------------------------------------------------------------


def _state(K, r=2):
    e = 2.0**-K
    return moment_fixed_point(K, LN2 + ALPHA_HAT[1](K) * e, r)


def _ey_second_order(K):
    return 17 / 6 - (11 / 8 + 1.5 * LN2) * K - (1 / 8 - 1.75 * LN2) * K**2 - LN2 / 4 * K**3


def _b2_second_order(K):
    return 6 - 2 * (1 + LN2) * K + 2 * LN2 * K**2


def test_mean_field_expansion():
    gaps = []
    for K in range(8, 15):
        s, e = _state(K), 2.0**-K
        dev = s.Ey / (s.alpha_hat * K) - 1 - (3 - K) / 2 * e
        gaps.append(abs(dev))
        if K >= 10:
            assert dev / e**2 == pytest.approx(_ey_second_order(K), rel=0.01)
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_variance_expansion():
    s, e = _state(12), 2.0**-12
    assert s.b2 / (s.alpha_hat * 12) == pytest.approx(2 * e, rel=0.05)
    for K in range(11, 15):
        s, e = _state(K), 2.0**-K
        dev = s.b2 / (s.alpha_hat * K) - 2 * e
        assert dev / e**2 == pytest.approx(_b2_second_order(K), rel=0.05)


def test_moment_scalings():
    for K in range(6, 15):
        s, e = _state(K), 2.0**-K
        g = s.alpha_hat * K
        assert 1.5 < s.b2 / (g * e) < 3.0
        assert 3.5 < s.b3 / (g * e * e) < 12.0
        assert s.Ey == pytest.approx(s.gamma * s.M[0], rel=1e-10)
        assert s.residual < 1e-12 * max(1.0, s.Ey)


@pytest.mark.parametrize("K", [6, 8, 10])
def test_first_order_closure_is_delta_picture(K):
    s = _state(K, r=1)
    assert s.b2 == 0.0
    assert s.delta == pytest.approx(solve_z_simplified(K, s.gamma), rel=1e-9)


def test_moment_sigma_agrees_with_series():
    diffs = []
    for K in range(8, 15):
        s, e = _state(K), 2.0**-K
        diff = abs(moment_sigma(s) - sigma_series2(K, s.alpha_hat))
        assert diff < K**4 * e**3
        diffs.append(diff)
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_moment_map_small_k_breaks_down():
    with pytest.raises(RuntimeError):
        _state(3)


def test_truncation_order_checked():
    with pytest.raises(ValueError):
        moment_fixed_point(8, 0.69, r=3)


# -- simplified equation and asymptotics -----------------------------------------


@given(K=st.integers(3, 12), gamma=st.floats(0.1, 300.0))
@settings(max_examples=40, deadline=None)
def test_simplified_map_fixes_one(K, gamma):
    w = 0.0
    assert (1 - w ** (K - 1)) ** gamma == 1.0
    z = solve_z_simplified(K, gamma)
    assert 0 < z <= 1


def test_simplified_subcritical():
    K = 5
    gamma = 0.5 * K * alpha_d_delta(K) / 2
    assert solve_z_simplified(K, gamma) == 1.0


@pytest.mark.parametrize("K,gamma", [(3, 10.0), (5, 60.0), (8, 1000.0)])
def test_simplified_supercritical(K, gamma):
    z = solve_z_simplified(K, gamma)
    f = (1 - ((1 - z) / (2 - z)) ** (K - 1)) ** gamma
    assert z < 1 and abs(f - z) < 1e-12


@pytest.mark.parametrize("K", [6, 10, 100, 10**4])
def test_dstar_both_forms(K):
    d = dstar(K)
    assert abs(math.exp(d) - 0.5 * (math.log(K) + d)) < 1e-12
    assert abs(d - math.log(0.5 * math.log(K) + 0.5 * d)) < 1e-12


def test_dstar_leading_behaviour():
    rel = [abs(dstar(K) - math.log(0.5 * math.log(K))) / math.log(0.5 * math.log(K)) for K in (10**2, 10**4, 10**8)]
    assert rel[0] > rel[1] > rel[2]


def test_dstar_needs_large_k():
    with pytest.raises(ValueError):
        dstar(5)
    with pytest.raises(ValueError):
        alpha_d_asymptotic(4)


def test_asymptotic_ratio_decreases():
    ratios = [alpha_d_asymptotic(K)[1] / alpha_d_delta(K) for K in range(6, 15)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert all(r > 1 for r in ratios)


@pytest.mark.parametrize("K", range(3, 51))
def test_stability_root_relation(K):
    assert abs(alpha_s_asymptotic(K)[0] - dstar(2 * K) - LN2) < 1e-10


def test_stability_vs_clustering_asymptotics():
    Ks = [10, 30, 100, 300, 1000]
    ratios = [alpha_s_asymptotic(K)[1] / alpha_d_asymptotic(K)[1] for K in Ks]
    assert all(r > 1 for r in ratios)
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    scaled = [(r - 1) * math.log(K) for r, K in zip(ratios, Ks)]
    assert max(scaled) < 2.0


def test_table_layout():
    rows = largek_table(range(3, 11), alpha_d_delta=alpha_d_delta)
    assert len(rows) == 8
    for col in ("alpha_d_delta", "alpha_s_asym", "alpha_c_r1", "alpha_c_r2", "alpha_c_r3", "UB_form", "LB_form"):
        vals = [r[col] for r in rows]
        assert all(b > a for a, b in zip(vals, vals[1:]))
    assert [r["alpha_d_asym"] is None for r in rows] == [True, True, True] + [False] * 5
    assert f"{rows[0]['alpha_d_delta']:.3f}" == "3.923"
