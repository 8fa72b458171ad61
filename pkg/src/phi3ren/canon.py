"""Canonical labelling of small coloured multigraphs.

Shared by the contraction engine (decorated diagrams with roots, legs and
two kinds of edges) and the admissible-graph enumerator. The method is the
classical individualisation-refinement scheme: colour refinement by sorted
neighbour-class multisets until the partition is equitable, then branching on
the first smallest non-trivial cell, keeping the lexicographically least
certificate. Graphs here have at most a few dozen vertices, so no
automorphism pruning is attempted.
"""

from __future__ import annotations

from collections import Counter
from typing import Hashable, Sequence

Edge = tuple  # (u, v, colour, directed)


def _signature_table(n: int, edges: Sequence[Edge]):
    nbrs: list[list[tuple[str, str, int]]] = [[] for _ in range(n)]
    for u, v, col, directed in edges:
        if u == v:
            nbrs[u].append((repr(col), "loop", u))
        elif directed:
            nbrs[u].append((repr(col), "out", v))
            nbrs[v].append((repr(col), "in", u))
        else:
            nbrs[u].append((repr(col), "und", v))
            nbrs[v].append((repr(col), "und", u))
    return nbrs


def _refine(cells: list[list[int]], nbrs) -> list[list[int]]:
    while True:
        cell_of = {}
        for i, cell in enumerate(cells):
            for v in cell:
                cell_of[v] = i
        new_cells: list[list[int]] = []
        for cell in cells:
            if len(cell) == 1:
                new_cells.append(cell)
                continue
            groups: dict[tuple, list[int]] = {}
            for v in cell:
                sig = tuple(sorted(Counter(
                    (c, tag, cell_of[w]) for c, tag, w in nbrs[v]).items()))
                groups.setdefault(sig, []).append(v)
            for sig in sorted(groups):
                new_cells.append(groups[sig])
        if len(new_cells) == len(cells):
            return new_cells
        cells = new_cells


def _certificate(order: list[int], colours, edges: Sequence[Edge]):
    pos = {v: i for i, v in enumerate(order)}
    vc = tuple(repr(colours[v]) for v in order)
    es = []
    for u, v, col, directed in edges:
        a, b = pos[u], pos[v]
        if not directed and a > b:
            a, b = b, a
        es.append((a, b, repr(col), bool(directed)))
    return (vc, tuple(sorted(es)))


def canonical_form(n: int, colours: Sequence[Hashable], edges: Sequence[Edge]):
    """Return ``(certificate, order)`` for a coloured multigraph.

    Args:
        n: Number of vertices, labelled ``0..n-1``.
        colours: Vertex colours; compared through ``repr``, so they should
            be built from ints, strings and tuples thereof.
        edges: ``(u, v, colour, directed)`` tuples. Parallel edges and loops
            are allowed; multiplicities matter.

    Returns:
        A hashable certificate, equal for two inputs iff they are isomorphic
        by a colour-preserving bijection, and a list ``order`` such that
        ``order[i]`` is the input vertex placed at canonical position ``i``.

    Example:
        >>> c1, _ = canonical_form(3, [0, 0, 1], [(0, 2, "e", False), (1, 2, "e", False)])
        >>> c2, _ = canonical_form(3, [1, 0, 0], [(1, 0, "e", False), (2, 0, "e", False)])
        >>> c1 == c2
        True
    """
    if n == 0:
        return ((), ()), []
    nbrs = _signature_table(n, edges)
    groups: dict[str, list[int]] = {}
    for v in range(n):
        groups.setdefault(repr(colours[v]), []).append(v)
    cells = [groups[k] for k in sorted(groups)]
    best: list = [None, None]

    def search(cells):
        cells = _refine(cells, nbrs)
        target = None
        for i, cell in enumerate(cells):
            if len(cell) > 1 and (target is None or len(cell) < len(cells[target])):
                target = i
        if target is None:
            order = [c[0] for c in cells]
            cert = _certificate(order, colours, edges)
            if best[0] is None or cert < best[0]:
                best[0], best[1] = cert, order
            return
        cell = cells[target]
        for v in cell:
            rest = [w for w in cell if w != v]
            search(cells[:target] + [[v], rest] + cells[target + 1:])

    search(cells)
    return best[0], best[1]


def are_isomorphic_bruteforce(n, colours_a, edges_a, colours_b, edges_b) -> bool:
    """Exhaustive permutation test; the oracle for :func:`canonical_form`.

    Only practical for ``n ≤ 8``.
    """
    from itertools import permutations

    def norm(edges, perm):
        out = []
        for u, v, col, directed in edges:
            a, b = perm[u], perm[v]
            if not directed and a > b:
                a, b = b, a
            out.append((a, b, repr(col), bool(directed)))
        return Counter(out)

    target = norm(edges_b, list(range(n)))
    cb = [repr(c) for c in colours_b]
    for perm in permutations(range(n)):
        if any(repr(colours_a[v]) != cb[perm[v]] for v in range(n)):
            continue
        if norm(edges_a, perm) == target:
            return True
    return False
