"""Survey propagation on a concrete instance and its per-instance complexity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .instance import FactorGraph
from .numerics import RngStream

__all__ = [
    "SurveyState",
    "SPContradiction",
    "InstanceComplexity",
    "sp_update_edge",
    "sp_run",
    "instance_complexity",
]


class SPContradiction(RuntimeError):
    """Some input variable of an edge update receives both an impeding and a
    supporting warning with certainty."""

    def __init__(self, clause, position):
        super().__init__(f"contradiction while updating edge clause {clause} -> position {position}")
        self.clause = clause
        self.position = position


@dataclass
class SurveyState:
    eta: np.ndarray  # (M, K), one survey per clause -> variable edge

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if np.any(self.eta < 0) or np.any(self.eta > 1):
            raise ValueError("surveys must lie in [0, 1]")

    @classmethod
    def zeros(cls, graph):
        return cls(np.zeros((graph.M, graph.K)))

    @classmethod
    def random(cls, graph, stream: RngStream):
        return cls(stream.uniform((graph.M, graph.K)))

    def copy(self):
        return SurveyState(self.eta.copy())


def _csr(graph: FactorGraph):
    K = graph.K
    ptr = np.zeros(graph.N + 1, dtype=np.int64)
    for i, memb in enumerate(graph.adjacency):
        ptr[i + 1] = ptr[i] + len(memb)
    edges = np.empty(ptr[-1], dtype=np.int64)
    for i, memb in enumerate(graph.adjacency):
        edges[ptr[i] : ptr[i + 1]] = [b * K + r for b, r in memb]
    return ptr, edges


@numba.njit(cache=True)
def _cavity_pis(a, q, K, variables, signs, ptr, edges, eta_flat):
    """(no-supporting, no-impeding) probabilities of the q-th variable of
    clause a, with a itself removed."""
    i = variables[a, q]
    s_a = signs[a, q]
    log_sup = 0.0
    log_imp = 0.0
    for k in range(ptr[i], ptr[i + 1]):
        e = edges[k]
        b = e // K
        if b == a:
            continue
        r = e - b * K
        l1 = math.log1p(-eta_flat[e]) if eta_flat[e] < 1.0 else -np.inf
        if signs[b, r] == s_a:
            log_sup += l1
        else:
            log_imp += l1
    return math.exp(log_sup), math.exp(log_imp)


@numba.njit(cache=True)
def _update_edge(a, p, K, variables, signs, ptr, edges, eta_flat):
    out = 1.0
    for q in range(K):
        if q == p:
            continue
        pi_s, pi_u = _cavity_pis(a, q, K, variables, signs, ptr, edges, eta_flat)
        den = pi_s + pi_u - pi_s * pi_u
        if den <= 0.0:
            return -1.0
        out *= pi_s * (1.0 - pi_u) / den
    return min(max(out, 0.0), 1.0)


@numba.njit(cache=True)
def _sweep(order, K, variables, signs, ptr, edges, eta_flat):
    """One random-sequential sweep; returns (max change, offending edge or -1)."""
    delta = 0.0
    for e in order:
        a = e // K
        p = e - a * K
        new = _update_edge(a, p, K, variables, signs, ptr, edges, eta_flat)
        if new < 0.0:
            return delta, e
        d = abs(new - eta_flat[e])
        if d > delta:
            delta = d
        eta_flat[e] = new
    return delta, -1


def sp_update_edge(graph: FactorGraph, state: SurveyState, clause: int, position: int):
    """New survey on edge ``clause -> variables[clause, position]``.

    Returns ``(eta, contradiction)``; on contradiction ``eta`` is NaN.
    """
    ptr, edges = _csr(graph)
    new = _update_edge(
        clause, position, graph.K, graph.variables, graph.signs, ptr, edges, state.eta.ravel()
    )
    if new < 0:
        return float("nan"), True
    return float(new), False


def sp_run(graph: FactorGraph, init="random", tol=1e-3, max_sweeps=1000, stream: RngStream | None = None):
    """Iterate SP with random-sequential sweeps until the largest change in a
    sweep drops below ``tol``.

    ``init`` is a SurveyState, ``"random"`` (uniform surveys) or ``"zero"``.
    Returns ``(state, converged, sweeps)``; raises SPContradiction when
    an update meets a certain contradiction.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(init, SurveyState):
        state = init.copy()
    elif init == "zero":
        state = SurveyState.zeros(graph)
    elif init == "random":
        if stream is None:
            raise ValueError("random initialisation needs a stream")
        state = SurveyState.random(graph, stream)
    else:
        raise ValueError(f"unknown init {init!r}")
    if graph.M == 0:
        return state, True, 0
    ptr, edges = _csr(graph)
    eta = state.eta.ravel()
    n_edges = graph.M * graph.K
    for sweep in range(1, max_sweeps + 1):
        order = stream.permutation(n_edges) if stream is not None else np.arange(n_edges)
        delta, bad = _sweep(order, graph.K, graph.variables, graph.signs, ptr, edges, eta)
        if bad >= 0:
            raise SPContradiction(int(bad // graph.K), int(bad % graph.K))
        if delta < tol:
            return SurveyState(eta.reshape(graph.M, graph.K)), True, sweep
    return SurveyState(eta.reshape(graph.M, graph.K)), False, max_sweeps


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------


@dataclass
class InstanceComplexity:
    sigma: float
    sigma_eq10: float
    clause_terms: np.ndarray
    variable_terms: np.ndarray
    edge_terms: np.ndarray  # (M, K)
    contradiction_flag: bool


def _safe_log(x):
    return math.log(x) if x > 0 else float("nan")


def instance_complexity(graph: FactorGraph, state: SurveyState) -> InstanceComplexity:
    """Clause, variable and clause-variable contributions and Sigma per
    variable, assembled both as sum_a S_a - sum_j (n_j - 1) S_j and as
    sum_a S_a + sum_j S_j - sum_{a,j} S_aj."""
    M, K, N = graph.M, graph.K, graph.N
    ptr, edges = _csr(graph)
    eta = state.eta.ravel()
    one_minus = 1.0 - eta
    bad = False

    clause_terms = np.zeros(M)
    for a in range(M):
        ok_all, imp_all = 1.0, 1.0
        for q in range(K):
            pi_s, pi_u = _cavity_pis(a, q, K, graph.variables, graph.signs, ptr, edges, eta)
            ok_all *= pi_s + pi_u - pi_s * pi_u
            imp_all *= pi_s * (1.0 - pi_u)
        arg = ok_all - imp_all
        bad |= not arg > 0
        clause_terms[a] = _safe_log(arg)

    variable_terms = np.zeros(N)
    edge_terms = np.zeros((M, K))
    for j, memb in enumerate(graph.adjacency):
        plus = np.prod([one_minus[b * K + r] for b, r in memb if graph.signs[b, r] > 0])
        minus = np.prod([one_minus[b * K + r] for b, r in memb if graph.signs[b, r] < 0])
        arg = plus + minus - plus * minus
        bad |= not arg > 0
        variable_terms[j] = _safe_log(arg)
        for a, p in memb:
            s = graph.signs[a, p]
            own = one_minus[a * K + p]
            same = np.prod([one_minus[b * K + r] for b, r in memb if graph.signs[b, r] == s and b != a])
            other = np.prod([one_minus[b * K + r] for b, r in memb if graph.signs[b, r] != s])
            rest = np.prod([one_minus[b * K + r] for b, r in memb if b != a])
            earg = own * same + other - own * rest
            bad |= not earg > 0
            edge_terms[a, p] = _safe_log(earg)

    n = graph.degrees()
    if bad:
        sigma = sigma10 = float("nan")
    else:
        sigma = (clause_terms.sum() - ((n - 1) * variable_terms).sum()) / N
        sigma10 = (clause_terms.sum() + variable_terms.sum() - edge_terms.sum()) / N
    return InstanceComplexity(
        sigma=float(sigma),
        sigma_eq10=float(sigma10),
        clause_terms=clause_terms,
        variable_terms=variable_terms,
        edge_terms=edge_terms,
        contradiction_flag=bool(bad),
    )
