import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksat_cavity.instance import FactorGraph, enumerate_warning_fixed_points, generate_random_ksat
from ksat_cavity.numerics import RngStream
from ksat_cavity.sp import SPContradiction, SurveyState, instance_complexity, sp_run, sp_update_edge
from trees import random_tree_instance


def direct_survey(graph, eta, a, p):
    """Survey on edge a -> variables[a, p], evaluated literal by literal."""
    out = 1.0
    for q in range(graph.K):
        if q == p:
            continue
        j = graph.variables[a, q]
        same, opposite = [], []
        for b, r in graph.adjacency[j]:
            if b == a:
                continue
            (same if graph.signs[b, r] == graph.signs[a, q] else opposite).append(eta[b, r])
        no_support = np.prod([1 - e for e in same])
        no_impede = np.prod([1 - e for e in opposite])
        # j forced against a  /  j not forced both ways
        p_u = (1 - no_impede) * no_support
        p_s = (1 - no_support) * no_impede
        p_0 = no_support * no_impede
        out *= p_u / (p_u + p_s + p_0)
    return out


def test_zero_input_gives_zero():
    g = generate_random_ksat(3, 30, 3.0, RngStream(0))
    s = SurveyState.zeros(g)
    for a in range(5):
        eta, bad = sp_update_edge(g, s, a, 0)
        assert eta == 0.0 and not bad


def test_single_impeding_neighbour_gives_one():
    # clause 0 = (x0 v x1 v x2); x1 and x2 each appear negated in one other clause
    g = FactorGraph.from_clauses(
        7,
        [
            [(0, 1), (1, 1), (2, 1)],
            [(1, -1), (3, 1), (4, 1)],
            [(2, -1), (5, 1), (6, 1)],
        ],
    )
    eta = np.zeros((3, 3))
    eta[1, 0] = 1.0
    eta[2, 0] = 1.0
    val, bad = sp_update_edge(g, SurveyState(eta), 0, 0)
    assert val == pytest.approx(1.0) and not bad


def test_contradiction_reported():
    g = FactorGraph.from_clauses(
        7,
        [
            [(0, 1), (1, 1), (2, 1)],
            [(1, -1), (3, 1), (4, 1)],
            [(1, 1), (5, 1), (6, 1)],
        ],
    )
    eta = np.zeros((3, 3))
    eta[1, 0] = eta[2, 0] = 1.0
    val, bad = sp_update_edge(g, SurveyState(eta), 0, 0)
    assert bad and math.isnan(val)
    with pytest.raises(SPContradiction):
        sp_run(g, SurveyState(eta), tol=1e-9, max_sweeps=5, stream=None)


@given(seed=st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_update_matches_direct_evaluation(seed):
    g = generate_random_ksat(3, 40, 4.0, RngStream(seed))
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0, 0.95, (g.M, g.K))
    s = SurveyState(eta)
    for _ in range(10):
        a, p = int(rng.integers(g.M)), int(rng.integers(g.K))
        val, bad = sp_update_edge(g, s, a, p)
        assert not bad
        assert val == pytest.approx(direct_survey(g, eta, a, p), rel=1e-12, abs=1e-15)


def test_state_bounds_enforced():
    with pytest.raises(ValueError):
        SurveyState(np.array([[1.2, 0.0, 0.0]]))


def test_zero_init_converges_immediately():
    g = generate_random_ksat(3, 100, 4.2, RngStream(1))
    s, conv, sweeps = sp_run(g, "zero", tol=1e-9, max_sweeps=10, stream=RngStream(2))
    assert conv and sweeps == 1 and not s.eta.any()


def _diameter(g):
    n = g.N + g.M
    nbr = [[] for _ in range(n)]
    for a, row in enumerate(g.variables):
        for i in row:
            nbr[g.N + a].append(int(i))
            nbr[int(i)].append(g.N + a)
    best = 0
    for src in range(n):
        dist = {src: 0}
        dq = deque([src])
        while dq:
            u = dq.popleft()
            for v in nbr[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    dq.append(v)
        best = max(best, max(dist.values()))
    return best


@given(seed=st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_tree_converges_within_diameter(seed):
    g = random_tree_instance(seed)
    s, conv, sweeps = sp_run(g, "random", tol=1e-12, max_sweeps=100, stream=RngStream(seed))
    assert conv
    assert sweeps <= _diameter(g) + 1
    assert np.all(s.eta == 0.0)


@given(seed=st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_eta_stays_in_unit_interval(seed):
    g = generate_random_ksat(3, 60, 4.2, RngStream(seed))
    s, _, _ = sp_run(g, "random", tol=1e-6, max_sweeps=30, stream=RngStream(seed, 1))
    assert np.all((s.eta >= 0) & (s.eta <= 1))


def test_desk_run_is_nontrivial():
    g = generate_random_ksat(3, 1000, 4.2, RngStream(7))
    s, conv, _ = sp_run(g, "random", tol=1e-3, max_sweeps=1000, stream=RngStream(7, 1))
    assert conv
    assert s.eta.max() > 0.1
    c = instance_complexity(g, s)
    assert not c.contradiction_flag


def test_zero_state_complexity_vanishes():
    g = generate_random_ksat(3, 50, 4.0, RngStream(3))
    c = instance_complexity(g, SurveyState.zeros(g))
    assert c.sigma == 0.0 and c.sigma_eq10 == 0.0
    assert not c.clause_terms.any() and not c.variable_terms.any() and not c.edge_terms.any()


def test_isolated_clause_complexity():
    g = FactorGraph.from_clauses(3, [[(0, 1), (1, -1), (2, 1)]])
    s, conv, _ = sp_run(g, "random", tol=1e-12, max_sweeps=10, stream=RngStream(0))
    assert conv and instance_complexity(g, s).sigma == 0.0


@given(seed=st.integers(0, 10**6), scale=st.floats(0.0, 0.9))
@settings(max_examples=40, deadline=None)
def test_two_assemblies_agree(seed, scale):
    g = generate_random_ksat(3, 80, 4.0, RngStream(seed))
    eta = np.random.default_rng(seed).uniform(0, scale, (g.M, g.K))
    c = instance_complexity(g, SurveyState(eta))
    assert abs(c.sigma - c.sigma_eq10) < 1e-10


def test_contradiction_flag():
    # x0 told TRUE and FALSE with certainty
    g = FactorGraph.from_clauses(5, [[(0, 1), (1, 1), (2, 1)], [(0, -1), (3, 1), (4, 1)]])
    eta = np.zeros((2, 3))
    eta[0, 0] = eta[1, 0] = 1.0
    c = instance_complexity(g, SurveyState(eta))
    assert c.contradiction_flag and math.isnan(c.sigma)


@given(seed=st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_tree_count_matches_complexity(seed):
    g = random_tree_instance(seed)
    s, conv, _ = sp_run(g, "random", tol=1e-12, max_sweeps=100, stream=RngStream(seed, 9))
    assert conv
    count, _ = enumerate_warning_fixed_points(g)
    c = instance_complexity(g, s)
    assert abs(math.exp(g.N * c.sigma) - count) / count < 1e-8
