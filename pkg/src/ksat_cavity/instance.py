"""Random K-SAT instances as factor graphs, DIMACS I/O and the brute-force
warning-configuration oracle used to validate SP on small graphs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .numerics import RngStream

__all__ = [
    "FactorGraph",
    "DimacsError",
    "generate_random_ksat",
    "read_dimacs",
    "write_dimacs",
    "warning_update",
    "enumerate_warning_fixed_points",
    "GraphTooLarge",
]


class DimacsError(ValueError):
    pass


class GraphTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class FactorGraph:
    """Bipartite clause/variable graph.

    ``variables[a, p]`` is the 0-based variable at position ``p`` of clause
    ``a``; ``signs[a, p]`` is +1 for an unnegated (full) edge and -1 for a
    negated (dashed) edge.  ``adjacency[i]`` lists ``(clause, position)``
    memberships of variable ``i``.
    """

    N: int
    variables: np.ndarray
    signs: np.ndarray
    adjacency: tuple = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        v = np.asarray(self.variables, dtype=np.int64)
        s = np.asarray(self.signs, dtype=np.int8)
        if v.ndim != 2 or v.shape != s.shape:
            raise ValueError("variables and signs must be (M, K) arrays of equal shape")
        if v.size and (v.min() < 0 or v.max() >= self.N):
            raise ValueError("variable index out of range")
        if not np.all(np.abs(s) == 1):
            raise ValueError("signs must be +1 or -1")
        for row in v:
            if len(set(row.tolist())) != len(row):
                raise ValueError("clause repeats a variable")
        v.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "variables", v)
        object.__setattr__(self, "signs", s)
        adj = [[] for _ in range(self.N)]
        for a, row in enumerate(v):
            for p, i in enumerate(row):
                adj[int(i)].append((a, p))
        object.__setattr__(self, "adjacency", tuple(tuple(x) for x in adj))

    @property
    def M(self) -> int:
        return self.variables.shape[0]

    @property
    def K(self) -> int:
        return self.variables.shape[1]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def degrees(self) -> np.ndarray:
        return np.bincount(self.variables.ravel(), minlength=self.N)

    def clauses(self):
        """Clauses as lists of (variable, sign) literals."""
        return [list(zip(r.tolist(), s.tolist())) for r, s in zip(self.variables, self.signs)]

    def literal_multiset(self):
        return sorted(
            tuple(sorted((int(i) + 1) * int(sg) for i, sg in zip(r, s)))
            for r, s in zip(self.variables, self.signs)
        )

    @classmethod
    def from_clauses(cls, N, clauses):
        """Build from a list of clauses, each a list of (variable, sign)."""
        if not clauses:
            return cls(N, np.zeros((0, 0), np.int64), np.zeros((0, 0), np.int8))
        v = np.array([[i for i, _ in c] for c in clauses], dtype=np.int64)
        s = np.array([[sg for _, sg in c] for c in clauses], dtype=np.int8)
        return cls(N, v, s)

    def is_tree(self) -> bool:
        """True when the factor graph is a forest (no cycles)."""
        parent = list(range(self.N + self.M))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, row in enumerate(self.variables):
            for i in row:
                r1, r2 = find(self.N + a), find(int(i))
                if r1 == r2:
                    return False
                parent[r1] = r2
        return True


def generate_random_ksat(K: int, N: int, alpha: float, stream: RngStream) -> FactorGraph:
    """Uniform random K-SAT: M = round(alpha N) clauses over K distinct
    variables each, every literal negated with probability 1/2."""
    if N < K:
        raise ValueError(f"N={N} smaller than clause width K={K}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    M = int(round(alpha * N))
    if M < 1:
        raise ValueError("round(alpha * N) must be at least 1")
    v = stream.integers(0, N, size=(M, K))
    srt = np.sort(v, axis=1)
    bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
    while bad.size:
        redo = stream.integers(0, N, size=(bad.size, K))
        v[bad] = redo
        srt = np.sort(redo, axis=1)
        bad = bad[(srt[:, 1:] == srt[:, :-1]).any(axis=1)]
    signs = np.where(stream.uniform((M, K)) < 0.5, -1, 1).astype(np.int8)
    return FactorGraph(N, v, signs)


# ---------------------------------------------------------------------------
# DIMACS
# ---------------------------------------------------------------------------


def read_dimacs(text: str) -> FactorGraph:
    header = None
    clauses = []
    current = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if header is not None or len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"line {lineno}: malformed header {line!r}")
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise DimacsError(f"line {lineno}: malformed header {line!r}") from None
            continue
        if header is None:
            raise DimacsError(f"line {lineno}: clause before 'p cnf' header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"line {lineno}: bad literal {tok!r}") from None
            if lit == 0:
                clauses.append(current)
                current = []
            else:
                if abs(lit) > header[0]:
                    raise DimacsError(f"line {lineno}: variable {abs(lit)} out of range")
                current.append(lit)
    if header is None:
        raise DimacsError("missing 'p cnf' header")
    if current:
        raise DimacsError("last clause is not terminated by 0")
    N, M = header
    if len(clauses) != M:
        raise DimacsError(f"header declares {M} clauses, found {len(clauses)}")
    widths = {len(c) for c in clauses}
    if len(widths) > 1:
        raise DimacsError(f"mixed clause widths {sorted(widths)}; K-SAT needs uniform width")
    lits = [[(abs(l) - 1, 1 if l > 0 else -1) for l in c] for c in clauses]
    try:
        return FactorGraph.from_clauses(N, lits)
    except ValueError as exc:
        raise DimacsError(str(exc)) from None


def write_dimacs(graph: FactorGraph, comments=()) -> str:
    out = [f"c {c}" for c in comments]
    out.append(f"p cnf {graph.N} {graph.M}")
    for row, sg in zip(graph.variables, graph.signs):
        out.append(" ".join(str((int(i) + 1) * int(s)) for i, s in zip(row, sg)) + " 0")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Warnings
# ---------------------------------------------------------------------------


def _edge_masks(graph: FactorGraph):
    """Per directed edge e = a*K + p: bitmasks (over edges) of the impeding
    and supporting warnings seen by each of the K-1 other variables of a."""
    M, K = graph.M, graph.K
    imp = np.zeros((M * K, max(K - 1, 1)), dtype=np.int64)
    sup = np.zeros_like(imp)
    for a in range(M):
        for p in range(K):
            col = 0
            for q in range(K):
                if q == p:
                    continue
                i = int(graph.variables[a, q])
                s_a = graph.signs[a, q]
                for b, r in graph.adjacency[i]:
                    if b == a:
                        continue
                    bit = np.int64(1) << np.int64(b * K + r)
                    if graph.signs[b, r] == s_a:
                        sup[a * K + p, col] |= bit
                    else:
                        imp[a * K + p, col] |= bit
                col += 1
    return imp, sup


def _variable_masks(graph: FactorGraph):
    """Per variable: edge bitmasks of warnings towards TRUE and towards FALSE."""
    K = graph.K
    to_true = np.zeros(graph.N, dtype=np.int64)
    to_false = np.zeros(graph.N, dtype=np.int64)
    for i, memb in enumerate(graph.adjacency):
        for b, r in memb:
            bit = np.int64(1) << np.int64(b * K + r)
            if graph.signs[b, r] > 0:
                to_true[i] |= bit
            else:
                to_false[i] |= bit
    return to_true, to_false


def warning_update(graph: FactorGraph, config) -> np.ndarray:
    """One synchronous warning-propagation update.

    ``config`` is an (M, K) 0/1 array; ``u[a, p] = 1`` means clause ``a``
    warns its p-th variable.  The new warning is 1 iff every other variable
    of the clause receives (from clauses other than ``a``) at least one
    impeding warning and no supporting one.
    """
    u = np.asarray(config, dtype=np.int8).reshape(graph.M, graph.K)
    new = np.zeros_like(u)
    for a in range(graph.M):
        for p in range(graph.K):
            send = 1
            for q in range(graph.K):
                if q == p:
                    continue
                i = int(graph.variables[a, q])
                s_a = graph.signs[a, q]
                impeded = supported = False
                for b, r in graph.adjacency[i]:
                    if b == a or not u[b, r]:
                        continue
                    if graph.signs[b, r] == s_a:
                        supported = True
                    else:
                        impeded = True
                if not impeded or supported:
                    send = 0
                    break
            new[a, p] = send
    return new


def is_contradiction_free(graph: FactorGraph, config) -> bool:
    u = np.asarray(config, dtype=np.int8).reshape(graph.M, graph.K)
    for memb in graph.adjacency:
        told = {int(graph.signs[b, r]) for b, r in memb if u[b, r]}
        if len(told) > 1:
            return False
    return True


@numba.njit(cache=True)
def _enumerate_kernel(n_edges, imp, sup, to_true, to_false, keep):
    found = np.empty(keep, dtype=np.int64)
    count = 0
    n_other = imp.shape[1]
    for cfg in range(1 << n_edges):
        ok = True
        for e in range(n_edges):
            send = 1
            for c in range(n_other):
                if (cfg & imp[e, c]) == 0 or (cfg & sup[e, c]) != 0:
                    send = 0
                    break
            if send != ((cfg >> e) & 1):
                ok = False
                break
        if not ok:
            continue
        for i in range(to_true.shape[0]):
            if (cfg & to_true[i]) != 0 and (cfg & to_false[i]) != 0:
                ok = False
                break
        if ok:
            if count < keep:
                found[count] = cfg
            count += 1
    return count, found[: min(count, keep)]


def enumerate_warning_fixed_points(graph: FactorGraph, max_directed_edges: int = 24, keep: int = 4096):
    """Exhaustively count contradiction-free fixed points of ``warning_update``.

    Returns ``(count, configs)`` where ``configs`` holds up to ``keep`` of
    the fixed points as (M, K) arrays.  The all-zero configuration is always
    among them.
    """
    if max_directed_edges > 24:
        raise GraphTooLarge("enumeration is capped at 24 directed edges")
    E = graph.M * graph.K
    if E > max_directed_edges:
        raise GraphTooLarge(f"{E} directed edges exceed the cap {max_directed_edges}")
    if E == 0:
        return 1, [np.zeros((graph.M, graph.K), dtype=np.int8)]
    imp, sup = _edge_masks(graph)
    to_true, to_false = _variable_masks(graph)
    count, found = _enumerate_kernel(E, imp, sup, to_true, to_false, keep)
    configs = [
        np.array([(int(c) >> e) & 1 for e in range(E)], dtype=np.int8).reshape(graph.M, graph.K)
        for c in found
    ]
    return int(count), configs
