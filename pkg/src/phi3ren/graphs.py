"""Admissible graphs of the cubic tree grammar and their power counting.

Trees of the grammar have internal vertices (one per ``P_χ⊛`` plus the
root), each with three factor slots. A slot holds an internal child, a leaf
Φ, or the unit 𝟏. An admissible graph is obtained by collapsing leaves two
at a time into a new vertex (so two leaves of one parent give a double edge)
and cutting every branch that is left with a free end. Every vertex of the
result has valency between 2 and 4.

With ``c`` collapses on ``m`` internal vertices the graph has ``N = m + c``
vertices and ``L = N - 1 + c`` edges, so the degree of divergence
``ρ = L·d - (N-1)(d+2) = c·d - 2(N-1)`` only depends on ``(m, c)``. This is
what makes the divergent part of the enumeration finite and cheap for
``d <= 3``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

from .canon import canonical_form
from .scaling import ambiguity_dimension, parabolic_codim
from .terms import ONE, PHI, Term, integ, prod


class NotSubcritical(Exception):
    """The finiteness argument does not apply in this dimension."""


class ResourceCapExceeded(RuntimeError):
    """Enumeration stopped at the configured cap before completion."""


@dataclass(frozen=True)
class GraphRecord:
    """Undirected loopless multigraph with its construction witness.

    Attributes:
        N: Number of vertices.
        edges: Sorted tuple of ``(u, v)`` pairs with ``u < v``.
        tree: Internal tree as a nested tuple of child subtrees.
        collapses: Collapsed leaf pairs as ``(u, v)`` internal-vertex indices
            (breadth-first numbering of ``tree``).
        key: Canonical certificate (equal iff isomorphic).
    """

    N: int
    edges: tuple
    tree: tuple = ()
    collapses: tuple = ()
    key: tuple = ()

    @property
    def L(self) -> int:
        return len(self.edges)

    def valencies(self) -> list[int]:
        val = [0] * self.N
        for u, v in self.edges:
            val[u] += 1
            val[v] += 1
        return val

    def valency_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.valencies()).items()))


@dataclass(frozen=True)
class DivergenceReport:
    graph: GraphRecord
    rho: int
    needs_renorm: bool
    ambiguity_dim: int


def graph_key(N: int, edges: Iterable[tuple[int, int]]) -> tuple:
    cert, _ = canonical_form(N, [0] * N, [(u, v, "e", False) for u, v in edges])
    return cert


def make_record(N: int, edges, tree=(), collapses=()) -> GraphRecord:
    edges = tuple(sorted((min(u, v), max(u, v)) for u, v in edges))
    if any(u == v for u, v in edges):
        raise ValueError("self-loops are not admissible")
    return GraphRecord(N, edges, tree, tuple(collapses), graph_key(N, edges))


# ---------------------------------------------------------------------------
# trees


@lru_cache(maxsize=None)
def rooted_trees(m: int) -> tuple:
    """Unordered rooted trees with ``m`` vertices and at most 3 children each.

    Trees are nested tuples of children, sorted, so each shape appears once.
    """
    if m == 1:
        return ((),)
    out = set()
    for k in (1, 2, 3):
        for sizes in _partitions(m - 1, k):
            for kids in _choose_multiset(sizes):
                out.add(tuple(sorted(kids)))
    return tuple(sorted(out))


def _partitions(total: int, parts: int, maximum: int | None = None):
    """Non-increasing tuples of ``parts`` positive ints summing to ``total``."""
    maximum = total if maximum is None else maximum
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(total, maximum), 0, -1):
        for rest in _partitions(total - first, parts - 1, first):
            yield (first,) + rest


def _choose_multiset(sizes):
    # pick trees for each size; equal sizes use non-decreasing index to avoid repeats
    groups = Counter(sizes)
    items = sorted(groups.items(), reverse=True)

    def rec(i):
        if i == len(items):
            yield ()
            return
        size, count = items[i]
        options = rooted_trees(size)
        for combo in _combinations_with_replacement(len(options), count):
            chosen = tuple(options[j] for j in combo)
            for rest in rec(i + 1):
                yield chosen + rest

    yield from rec(0)


def _combinations_with_replacement(n, k, start=0):
    if k == 0:
        yield ()
        return
    for i in range(start, n):
        for rest in _combinations_with_replacement(n, k - 1, i):
            yield (i,) + rest


def _flatten_tree(tree):
    """Breadth-first numbering: returns parent list and children counts."""
    parent = [-1]
    nodes = [tree]
    i = 0
    while i < len(nodes):
        for child in nodes[i]:
            parent.append(i)
            nodes.append(child)
        i += 1
    children = [len(x) for x in nodes]
    return parent, children


def tree_to_term(tree, usage: Sequence[int]) -> Term:
    """Term of the grammar realising ``tree`` with ``usage[u]`` Φ-leaves at u.

    Free slots are filled with 𝟏, which the product absorbs.
    """
    parent, _ = _flatten_tree(tree)
    kids = [[] for _ in parent]
    for v, p in enumerate(parent):
        if p >= 0:
            kids[p].append(v)

    def build(u):
        factors = [integ(build(w)) for w in kids[u]] + [PHI] * usage[u]
        factors += [ONE] * (3 - len(factors))
        return prod(*factors)

    return build(0)


# ---------------------------------------------------------------------------
# enumeration


def _collapse_multisets(cap, c, must_use):
    m = len(cap)
    pairs = [(u, v) for u in range(m) for v in range(u, m) if u != v or cap[u] >= 2]
    used = [0] * m
    chosen: list[tuple[int, int]] = []

    def rec(i, left):
        if left == 0:
            if all(used[u] >= 1 for u in must_use):
                yield tuple(chosen)
            return
        if i == len(pairs):
            return
        u, v = pairs[i]
        # take k copies of pair i
        k = 0
        while True:
            if k:
                chosen.append((u, v))
            yield from rec(i + 1, left - k)
            if k >= left:
                break
            if u == v:
                if used[u] + 2 > cap[u]:
                    break
                used[u] += 2
            else:
                if used[u] + 1 > cap[u] or used[v] + 1 > cap[v]:
                    break
                used[u] += 1
                used[v] += 1
            k += 1
        for _ in range(k):
            chosen.pop()
            if u == v:
                used[u] -= 2
            else:
                used[u] -= 1
                used[v] -= 1

    yield from rec(0, c)


def _build_graph(parent, collapses):
    m = len(parent)
    edges = [(parent[v], v) for v in range(1, m)]
    for k, (u, v) in enumerate(collapses):
        w = m + k
        edges.append((u, w))
        edges.append((v, w))
    return m + len(collapses), edges


def rho_of(N: int, L: int, d: int) -> int:
    """``ρ = L·d - (N-1)(d+2)``."""
    return L * d - (N - 1) * (d + 2)


def enumerate_admissible(N_max: int, d: int | None = None, rho_min: int | None = None,
                         max_graphs: int = 2_000_000) -> list[GraphRecord]:
    """All admissible graphs with ``N <= N_max`` up to isomorphism.

    Args:
        N_max: Largest vertex count.
        d: Dimension for the optional divergence filter.
        rho_min: If given (with ``d``), keep only graphs with ``ρ >= rho_min``;
            since ρ depends only on the tree size and the number of
            collapses, whole families are skipped without being built.
        max_graphs: Cap on candidate graphs examined.

    Raises:
        ResourceCapExceeded: if the cap is hit before completion.
    """
    if N_max < 2:
        raise ValueError("N_max must be >= 2")
    if (rho_min is None) != (d is None):
        raise ValueError("d and rho_min go together")
    seen: dict[tuple, GraphRecord] = {}
    examined = 0
    for m in range(1, N_max):
        leaves_total = 2 * m + 1
        c_values = [c for c in range(1, min(N_max - m, leaves_total // 2) + 1)
                    if rho_min is None or c * d - 2 * (m + c - 1) >= rho_min]
        if not c_values:
            continue
        for tree in rooted_trees(m):
            parent, children = _flatten_tree(tree)
            cap = [3 - k for k in children]
            must = [u for u in range(m) if children[u] == 0]
            for c in c_values:
                for col in _collapse_multisets(cap, c, must):
                    if m > 1 and children[0] == 1 and not any(0 in p for p in col):
                        continue  # root would be cut: generated from a smaller tree
                    examined += 1
                    if examined > max_graphs:
                        raise ResourceCapExceeded(f"more than {max_graphs} candidates")
                    N, edges = _build_graph(parent, col)
                    rec = make_record(N, edges, tree, col)
                    if rec.key not in seen:
                        seen[rec.key] = rec
    return sorted(seen.values(), key=lambda g: (g.N, g.L, repr(g.key)))


def provenance_term(g: GraphRecord) -> Term:
    """Term of the grammar from which ``g`` is obtained by collapsing."""
    parent, _ = _flatten_tree(g.tree)
    usage = [0] * len(parent)
    for u, v in g.collapses:
        usage[u] += 1
        usage[v] += 1
    return tree_to_term(g.tree, usage)


def rebuild_from_provenance(g: GraphRecord) -> GraphRecord:
    parent, _ = _flatten_tree(g.tree)
    N, edges = _build_graph(parent, g.collapses)
    return make_record(N, edges, g.tree, g.collapses)


# ---------------------------------------------------------------------------
# power counting and lemmas


def degree_of_divergence(g: GraphRecord, d: int) -> DivergenceReport:
    rho = rho_of(g.N, g.L, d)
    return DivergenceReport(g, rho, rho >= 0,
                            ambiguity_dimension(rho, parabolic_codim(g.N - 1, d)))


def divergence_bound(N: int, d: int) -> Fraction:
    """Upper bound ``N(7d/12 - 2) + d + 2`` on ρ for admissible graphs."""
    return N * (Fraction(7 * d, 12) - 2) + d + 2


def verify_valency_lemmas(g: GraphRecord) -> bool:
    """``#val2 >= ⌈N/3⌉``, ``#val4 <= ⌊N/2⌋`` and ``L <= 19N/12``."""
    hist = Counter(g.valencies())
    return (hist.get(2, 0) >= -(-g.N // 3)
            and hist.get(4, 0) <= g.N // 2
            and Fraction(g.L) <= Fraction(19 * g.N, 12))


def ratio_sequences(n: int) -> tuple[Fraction, Fraction]:
    """Valency ratios of the two extremal tree families at depth ``n``.

    ``r2 = (2^n+1)/(3·2^n-1)`` (share of valency-2 vertices) and
    ``r4 = (3^{n+1}-1)/(2·3^{n+1}+2)`` (share of valency-4 vertices).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    return (Fraction(2**n + 1, 3 * 2**n - 1),
            Fraction(3 ** (n + 1) - 1, 2 * 3 ** (n + 1) + 2))


def binary_family(n: int) -> GraphRecord:
    """Collapsed ``T_n`` with ``T_0 = Φ²``, ``T_{n+1} = (P⊛T_n)²``."""
    parent = [-1]
    frontier = [0]
    for _ in range(n):
        nxt = []
        for u in frontier:
            for _ in range(2):
                parent.append(u)
                nxt.append(len(parent) - 1)
        frontier = nxt
    col = [(u, u) for u in frontier]
    N, edges = _build_graph(parent, col)
    return make_record(N, edges)


def ternary_family(n: int) -> GraphRecord:
    """Collapsed ``Φ·T_n`` with ``T_0 = P⊛Φ³``, ``T_{n+1} = P⊛(T_n)³``."""
    parent = [-1, 0]
    frontier = [1]
    for _ in range(n):
        nxt = []
        for u in frontier:
            for _ in range(3):
                parent.append(u)
                nxt.append(len(parent) - 1)
        frontier = nxt
    leaves = [0] + [u for u in frontier for _ in range(3)]
    col = [(leaves[i], leaves[i + 1]) for i in range(0, len(leaves), 2)]
    N, edges = _build_graph(parent, col)
    return make_record(N, edges)


def extremal_n9() -> GraphRecord:
    """Nine-vertex graph with fourteen edges attaining the valency extremes."""
    cycle = [(i, (i + 1) % 9) for i in range(9)]
    chords = [(0, 2), (0, 3), (1, 3), (1, 2), (5, 7)]
    return make_record(9, cycle + chords)


def subcritical_threshold(d: int) -> int:
    """Least N from which the divergence bound is non-positive."""
    slope = Fraction(7 * d, 12) - 2
    if slope >= 0:
        raise NotSubcritical(f"d={d}: 7d/12 - 2 = {slope} >= 0")
    return math.ceil(Fraction(d + 2) / -slope)


def finiteness_certificate(d: int, extra: int = 0):
    """Threshold and complete list of divergent admissible graphs.

    Args:
        d: Spatial dimension.
        extra: Enumerate up to ``threshold + extra`` (stability checks).

    Returns:
        ``(threshold, reports)`` with one :class:`DivergenceReport` per
        divergent graph, sorted by size.

    Raises:
        NotSubcritical: when ``7d/12 - 2 >= 0``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    threshold = subcritical_threshold(d)
    graphs = enumerate_admissible(threshold + extra, d=d, rho_min=0)
    return threshold, [degree_of_divergence(g, d) for g in graphs]


# ---------------------------------------------------------------------------
# output


def reports_to_csv(reports: Sequence[DivergenceReport]) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "L", "valency_histogram", "rho", "ambiguity_dim", "key"])
    for r in reports:
        g = r.graph
        hist = ";".join(f"{k}:{v}" for k, v in g.valency_histogram().items())
        w.writerow([g.N, g.L, hist, r.rho, r.ambiguity_dim, key_digest(g)])
    return buf.getvalue()


def key_digest(g: GraphRecord) -> str:
    import hashlib

    return hashlib.sha1(repr(g.key).encode()).hexdigest()[:12]


def graph_to_dot(g: GraphRecord, name: str = "G") -> str:
    lines = [f"graph {name} {{"]
    for v in range(g.N):
        lines.append(f"  v{v};")
    for u, v in g.edges:
        lines.append(f"  v{u} -- v{v};")
    lines.append("}")
    return "\n".join(lines)
