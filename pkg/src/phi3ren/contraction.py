"""Wick-contraction engine on decorated diagrams.

A term of the functional algebra is drawn as a rooted tree of integration
vertices: every ``P_χ⊛`` opens a new vertex joined to its parent by a
directed P-edge, a product shares its vertex, every Φ is an open leg and
smooth labels decorate vertices. The deformed product ``Γ_·Q`` sums over all
partial matchings of legs, each matched pair becoming an undirected Q-edge.
Legs at one vertex are interchangeable, so a matching is summarised by the
symmetric count matrix ``m[u][v]`` and weighted by

    Π_u n_u! / (r_u! 2^{m_uu} m_uu!)  /  Π_{u<v} m_uv!

where ``n_u`` are the legs at ``u`` and ``r_u`` those left open.

Divergent contracted subgraphs are replaced by named symbols. Power counting
uses heat weights in spatial dimension ``d``: a P-edge carries ``d``, a
Q-edge ``d-2`` and each extra vertex costs ``d+2``. A Q self-loop (the
tadpole) becomes ``C1`` when ``d >= 2``; afterwards minimal connected,
bridgeless vertex sets carrying at least one Q-edge and ``ρ >= 0`` are
tagged one at a time. With ``d=None`` nothing is tagged.
"""

from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .canon import canonical_form
from .scaling import ambiguity_dimension, parabolic_codim
from .terms import ONE, PHI, Term, expand_solution, integ, prod, smooth

DEFAULT_D = 3


@dataclass(frozen=True)
class Symbol:
    """A renormalisation constant attached to a divergent subgraph.

    Attributes:
        name: ``C1`` (tadpole), ``C2`` (parent-child P·Q² loop), ``Q2``
            (bare Q² between two vertices) or ``R_<hash>`` for other shapes.
        key: Canonical certificate of the replaced kernel.
        vertices: Vertices the kernel lives on.
        q_edges: Covariance edges absorbed into the kernel.
        rho: Degree of divergence of the kernel.
        ambiguity_dim: Dimension of the extension freedom.
        inner: Multi-vertex symbols absorbed into this one.
    """

    name: str
    key: tuple
    vertices: tuple
    q_edges: tuple
    rho: int
    ambiguity_dim: int
    inner: tuple = ()

    def all_q_edges(self) -> tuple:
        out = list(self.q_edges)
        for s in self.inner:
            out.extend(s.all_q_edges())
        return tuple(sorted(out))

    def remap(self, perm: Mapping[int, int]) -> "Symbol":
        return replace(
            self,
            vertices=tuple(sorted(perm[v] for v in self.vertices)),
            q_edges=tuple(sorted(_pair(perm[u], perm[v]) for u, v in self.q_edges)),
            inner=tuple(sorted((s.remap(perm) for s in self.inner), key=_symbol_sort)),
        )


def _symbol_sort(s: Symbol):
    return (s.name, s.vertices, s.q_edges)


def _pair(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class ContractedTerm:
    """A diagram with an exact coefficient.

    Attributes:
        n_vertices: Number of integration points.
        roots: External roots, one per tensor slot, in slot order.
        p_edges: Directed ``(parent, child)`` parametrix edges.
        q_edges: Undirected covariance edges ``(u, v)`` with ``u <= v``
            that were not absorbed by a symbol.
        legs: Open Φ-legs per vertex.
        smooth: Smooth labels per vertex (sorted tuples).
        symbols: Renormalisation symbols.
        coefficient: Exact rational weight.
        arg: Argument vertex when the diagram encodes a linear operator
            (see :func:`renormalized_equation`); ``None`` otherwise.
    """

    n_vertices: int
    roots: tuple
    p_edges: tuple
    q_edges: tuple
    legs: tuple
    smooth: tuple
    symbols: tuple = ()
    coefficient: Fraction = Fraction(1)
    arg: int | None = None

    @property
    def structure(self) -> tuple:
        return (self.n_vertices, self.roots, self.p_edges, self.q_edges, self.legs,
                self.smooth, self.symbols, self.arg)

    @property
    def total_legs(self) -> int:
        return sum(self.legs)

    def scaled(self, c) -> "ContractedTerm":
        return replace(self, coefficient=self.coefficient * Fraction(c))

    def symbol_names(self) -> list[str]:
        return sorted(s.name for s in self.symbols)

    def __str__(self) -> str:
        return to_text(self)


# ---------------------------------------------------------------------------
# construction and canonical form


def term_to_diagram(t: Term, coefficient=1) -> ContractedTerm:
    """Uncontracted diagram of a term (root is vertex 0)."""
    legs: list[int] = [0]
    labels: list[list[str]] = [[]]
    p_edges: list[tuple[int, int]] = []

    def build(x: Term, v: int):
        if x.kind == "phi":
            legs[v] += 1
        elif x.kind == "smooth":
            labels[v].append(x.label)
        elif x.kind == "prod":
            for c in x.children:
                build(c, v)
        elif x.kind == "integ":
            w = len(legs)
            legs.append(0)
            labels.append([])
            p_edges.append((v, w))
            build(x.children[0], w)

    build(t, 0)
    return ContractedTerm(len(legs), (0,), tuple(p_edges), (), tuple(legs),
                          tuple(tuple(sorted(x)) for x in labels), (), Fraction(coefficient))


def _graph_encoding(ct: ContractedTerm):
    n = ct.n_vertices
    colours = []
    for v in range(n):
        slot = ct.roots.index(v) if v in ct.roots else -1
        colours.append(("v", slot, 1 if ct.arg == v else 0, ct.legs[v], ct.smooth[v]))
    edges = [(u, v, "p", True) for u, v in ct.p_edges]
    edges += [(u, v, "q", False) for u, v in ct.q_edges]

    def add_symbol(s: Symbol, idx):
        colours.append(("s", s.name, s.rho))
        for v in s.vertices:
            edges.append((idx, v, "s", False))
        for u, v in s.q_edges:
            edges.append((u, v, "q:" + s.name, False))
        for inner in s.inner:
            j = len(colours)
            add_symbol(inner, j)
            edges.append((idx, j, "nest", True))

    for s in ct.symbols:
        add_symbol(s, len(colours))
    return len(colours), colours, edges


@lru_cache(maxsize=200_000)
def _canonical_structure(structure: tuple) -> tuple:
    n, roots, p_edges, q_edges, legs, labels, symbols, arg = structure
    ct = ContractedTerm(n, roots, p_edges, q_edges, legs, labels, symbols, Fraction(1), arg)
    total, colours, edges = _graph_encoding(ct)
    _, order = canonical_form(total, colours, edges)
    real = [v for v in order if v < n]
    perm = {old: new for new, old in enumerate(real)}
    new = ContractedTerm(
        n,
        tuple(perm[r] for r in roots),
        tuple(sorted((perm[u], perm[v]) for u, v in p_edges)),
        tuple(sorted(_pair(perm[u], perm[v]) for u, v in q_edges)),
        tuple(legs[old] for old in real),
        tuple(labels[old] for old in real),
        tuple(sorted((s.remap(perm) for s in symbols), key=_symbol_sort)),
        Fraction(1),
        None if arg is None else perm[arg],
    )
    return new.structure


def canonical(ct: ContractedTerm) -> ContractedTerm:
    """Relabel vertices canonically; isomorphic diagrams become identical."""
    s = _canonical_structure(ct.structure)
    return ContractedTerm(*s[:7], coefficient=ct.coefficient, arg=s[7])


def collect(terms: Iterable[ContractedTerm]) -> list[ContractedTerm]:
    """Canonicalise, add coefficients of isomorphic diagrams, drop zeros."""
    acc: dict[tuple, Fraction] = defaultdict(Fraction)
    for t in terms:
        c = canonical(t)
        acc[c.structure] += c.coefficient
    out = [ContractedTerm(*s[:7], coefficient=c, arg=s[7]) for s, c in acc.items() if c != 0]
    out.sort(key=lambda t: repr(t.structure))
    return out


def as_dict(terms: Iterable[ContractedTerm]) -> dict[tuple, Fraction]:
    """``{canonical structure: coefficient}`` view, convenient for equality."""
    return {t.structure: t.coefficient for t in collect(terms)}


def equal_sums(a: Iterable[ContractedTerm], b: Iterable[ContractedTerm]) -> bool:
    return as_dict(a) == as_dict(b)


def add(*sums: Iterable[ContractedTerm]) -> list[ContractedTerm]:
    return collect(t for s in sums for t in s)


def subtract(a, b) -> list[ContractedTerm]:
    return collect(list(a) + [t.scaled(-1) for t in b])


def scale(terms, c) -> list[ContractedTerm]:
    return collect(t.scaled(c) for t in terms)


# ---------------------------------------------------------------------------
# symbols and power counting

_KNOWN_SHAPES: dict[tuple, str] | None = None


def _subgraph_key(W: Sequence[int], p_edges, q_edges, inner: Sequence[Symbol]) -> tuple:
    idx = {v: i for i, v in enumerate(sorted(W))}
    colours = [("w",)] * len(idx)
    edges = [(idx[u], idx[v], "p", True) for u, v in p_edges]
    edges += [(idx[u], idx[v], "q", False) for u, v in q_edges]
    for s in inner:
        j = len(colours)
        colours.append(("s", s.name))
        for v in s.vertices:
            edges.append((j, idx[v], "s", False))
        for u, v in s.q_edges:
            edges.append((idx[u], idx[v], "q:" + s.name, False))
    cert, _ = canonical_form(len(colours), colours, edges)
    return cert


def _known_shapes() -> dict[tuple, str]:
    global _KNOWN_SHAPES
    if _KNOWN_SHAPES is None:
        _KNOWN_SHAPES = {
            _subgraph_key([0], [], [(0, 0)], []): "C1",
            _subgraph_key([0, 1], [(0, 1)], [(0, 1), (0, 1)], []): "C2",
            _subgraph_key([0, 1], [], [(0, 1), (0, 1)], []): "Q2",
        }
    return _KNOWN_SHAPES


def symbol_name(key: tuple) -> str:
    """Stable name of a divergent kernel shape."""
    known = _known_shapes()
    if key in known:
        return known[key]
    return "R_" + hashlib.sha1(repr(key).encode()).hexdigest()[:8]


def _symbol_sd(s: Symbol, d: int) -> int:
    return s.rho + (len(s.vertices) - 1) * (d + 2)


def _graph_points(s: Symbol) -> int:
    return len(s.vertices) + len(s.all_q_edges())


def _connected(W, edges) -> bool:
    W = list(W)
    if not W:
        return True
    adj = defaultdict(set)
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen = {W[0]}
    stack = [W[0]]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(W)


def _find_divergent(n, p_edges, q_edges, symbols, d):
    if not any(u != v for u, v in q_edges):
        return None
    multi = [s for s in symbols if len(s.vertices) >= 2]
    for size in range(2, n + 1):
        for W in combinations(range(n), size):
            Ws = set(W)
            qin = [e for e in q_edges if e[0] in Ws and e[1] in Ws]
            if not any(u != v for u, v in qin):
                continue
            inner = [s for s in multi if set(s.vertices) <= Ws]
            covered = set()
            for s in inner:
                sv = set(s.vertices)
                covered.update(e for e in p_edges if e[0] in sv and e[1] in sv)
            pin = [e for e in p_edges if e[0] in Ws and e[1] in Ws and e not in covered]
            rho = (len(pin) * d + len(qin) * (d - 2) + sum(_symbol_sd(s, d) for s in inner)
                   - (size - 1) * (d + 2))
            if rho < 0:
                continue
            removable = pin + [e for e in qin if e[0] != e[1]]
            glue = []
            for s in inner:
                vs = list(s.vertices)
                glue += [(a, b) for a, b in zip(vs, vs[1:])] * 2
            if not _connected(W, removable + glue):
                continue
            if any(not _connected(W, removable[:i] + removable[i + 1:] + glue)
                   for i in range(len(removable))):
                continue
            return W, qin, inner, pin, rho
    return None


def tag_divergences(ct: ContractedTerm, d: int | None = DEFAULT_D) -> ContractedTerm:
    """Replace divergent contracted subgraphs by symbols (see module doc)."""
    if d is None or not ct.q_edges:
        return ct
    q = list(ct.q_edges)
    syms = list(ct.symbols)
    if d - 2 >= 0:
        key = _subgraph_key([0], [], [(0, 0)], [])
        kept = []
        for u, v in q:
            if u == v:
                syms.append(Symbol(symbol_name(key), key, (u,), ((u, u),), d - 2,
                                   ambiguity_dimension(d - 2, parabolic_codim(1, d))))
            else:
                kept.append((u, v))
        q = kept
    while True:
        found = _find_divergent(ct.n_vertices, ct.p_edges, q, syms, d)
        if found is None:
            break
        W, qin, inner, pin, rho = found
        for e in qin:
            q.remove(e)
        for s in inner:
            syms.remove(s)
        Ws = set(W)
        p_in = [e for e in ct.p_edges if e[0] in Ws and e[1] in Ws]
        key = _subgraph_key(W, p_in, qin, inner)
        sym = Symbol(symbol_name(key), key, tuple(sorted(W)), tuple(sorted(qin)), rho, 0,
                     tuple(sorted(inner, key=_symbol_sort)))
        pts = _graph_points(sym)
        sym = replace(sym, ambiguity_dim=ambiguity_dimension(rho, parabolic_codim(pts - 1, d)))
        syms.append(sym)
    return replace(ct, q_edges=tuple(sorted(q)), symbols=tuple(sorted(syms, key=_symbol_sort)))


# ---------------------------------------------------------------------------
# pairings


def pairing_patterns(legs: Sequence[int], allowed=None, max_open: int | None = None):
    """Yield ``(m, weight)`` for all contraction patterns.

    Args:
        legs: Open legs per vertex.
        allowed: Predicate ``(u, v) -> bool`` restricting which vertex pairs
            may be joined (``u <= v``); default all.
        max_open: If given, only patterns leaving at most this many legs.

    Yields:
        ``m`` as a dict ``{(u, v): count}`` (``u <= v``, zero entries
        omitted) and the integer number of leg matchings it represents.
    """
    verts = [v for v, n in enumerate(legs) if n > 0]
    pairs = [(u, v) for i, u in enumerate(verts) for v in verts[i:]
             if allowed is None or allowed(u, v)]
    if max_open == 0 and sum(legs) % 2:
        return
    rem = list(legs)
    m: dict[tuple[int, int], int] = {}

    def weight():
        w = Fraction(1)
        for u in verts:
            muu = m.get((u, u), 0)
            w *= Fraction(math.factorial(legs[u]),
                          math.factorial(rem[u]) * 2**muu * math.factorial(muu))
        for (u, v), c in m.items():
            if u != v:
                w /= math.factorial(c)
        return int(w)

    def rec(i):
        if i == len(pairs):
            if max_open is None or sum(rem) <= max_open:
                yield dict(m), weight()
            return
        u, v = pairs[i]
        cap = rem[u] // 2 if u == v else min(rem[u], rem[v])
        for c in range(cap + 1):
            if c:
                m[(u, v)] = c
            rem[u] -= c
            rem[v] -= c
            yield from rec(i + 1)
            rem[u] += c
            rem[v] += c
            m.pop((u, v), None)

    yield from rec(0)


def _apply_pattern(ct: ContractedTerm, m, w) -> ContractedTerm:
    legs = list(ct.legs)
    q = list(ct.q_edges)
    for (u, v), c in m.items():
        legs[u] -= c
        legs[v] -= c
        q.extend([(u, v)] * c)
    return replace(ct, legs=tuple(legs), q_edges=tuple(sorted(q)),
                   coefficient=ct.coefficient * w)


def _contract(ct: ContractedTerm, allowed, d, max_open=None) -> list[ContractedTerm]:
    out = []
    for m, w in pairing_patterns(ct.legs, allowed, max_open):
        out.append(tag_divergences(_apply_pattern(ct, m, w), d))
    return out


def _linear_terms(x) -> list[tuple[Fraction, Term]]:
    if isinstance(x, Term):
        return [(Fraction(1), x)]
    if isinstance(x, Mapping):
        return [(Fraction(c), t) for t, c in x.items()]
    return [(Fraction(c), t) for c, t in x]


def gamma_cdotQ(t, d: int | None = DEFAULT_D, max_open: int | None = None) -> list[ContractedTerm]:
    """Deformed image ``Γ_·Q`` of a term or linear combination of terms.

    Args:
        t: A :class:`Term`, a ``{Term: coefficient}`` mapping or a list of
            ``(coefficient, Term)`` pairs.
        d: Spatial dimension used for divergence tagging (``None``: no tags).
        max_open: Keep only diagrams with at most this many open legs
            (``0`` gives the φ = 0 evaluation directly).

    Example:
        >>> [(str(x.coefficient), x.total_legs) for x in gamma_cdotQ(prod(PHI, PHI, PHI))]
        [('1', 3), ('3', 1)]
    """
    out = []
    for c, term in _linear_terms(t):
        base = term_to_diagram(term, c)
        out.extend(_contract(base, None, d, max_open))
    return collect(out)


def _disjoint_union(parts: Sequence[ContractedTerm]):
    """Disjoint union; returns the diagram and the group index per vertex."""
    offset = 0
    n = 0
    roots, p, q, legs, labels, syms, groups = [], [], [], [], [], [], []
    coef = Fraction(1)
    arg = None
    for g, ct in enumerate(parts):
        perm = {v: v + offset for v in range(ct.n_vertices)}
        roots.extend(perm[r] for r in ct.roots)
        p.extend((perm[u], perm[v]) for u, v in ct.p_edges)
        q.extend((perm[u], perm[v]) for u, v in ct.q_edges)
        legs.extend(ct.legs)
        labels.extend(ct.smooth)
        syms.extend(s.remap(perm) for s in ct.symbols)
        groups.extend([g] * ct.n_vertices)
        coef *= ct.coefficient
        if ct.arg is not None:
            arg = perm[ct.arg]
        offset += ct.n_vertices
        n += ct.n_vertices
    ct = ContractedTerm(n, tuple(roots), tuple(p), tuple(sorted(q)), tuple(legs),
                        tuple(labels), tuple(syms), coef, arg)
    return ct, groups


def _merge_vertices(ct: ContractedTerm, keep: int, drop: Sequence[int],
                    return_perm: bool = False):
    """Identify vertices ``drop`` with ``keep`` and renumber compactly."""
    drop_set = set(drop) - {keep}
    remaining = [v for v in range(ct.n_vertices) if v not in drop_set]
    perm = {v: i for i, v in enumerate(remaining)}
    for v in drop_set:
        perm[v] = perm[keep]
    legs = [0] * len(remaining)
    labels: list[list[str]] = [[] for _ in remaining]
    for v in range(ct.n_vertices):
        legs[perm[v]] += ct.legs[v]
        labels[perm[v]].extend(ct.smooth[v])
    roots = []
    for r in ct.roots:
        if perm[r] not in roots:
            roots.append(perm[r])
    out = ContractedTerm(
        len(remaining), tuple(roots),
        tuple(sorted((perm[u], perm[v]) for u, v in ct.p_edges)),
        tuple(sorted(_pair(perm[u], perm[v]) for u, v in ct.q_edges)),
        tuple(legs), tuple(tuple(sorted(x)) for x in labels),
        tuple(s.remap(perm) for s in ct.symbols), ct.coefficient,
        None if ct.arg is None else perm[ct.arg])
    return (out, perm) if return_perm else out


def cdotQ_product(a: Iterable[ContractedTerm], b: Iterable[ContractedTerm],
                  d: int | None = DEFAULT_D) -> list[ContractedTerm]:
    """``a ·_Q b``: merge roots and sum over cross pairings of open legs."""
    out = []
    for x in a:
        for y in b:
            u, groups = _disjoint_union([x, y])
            cross = lambda i, j: groups[i] != groups[j]  # noqa: E731
            for m, w in pairing_patterns(u.legs, cross):
                c = _apply_pattern(u, m, w)
                merged = _merge_vertices(c, c.roots[0], [c.roots[1]])
                out.append(tag_divergences(merged, d))
    return collect(out)


def pointwise_product(*factors: Iterable[ContractedTerm], d: int | None = DEFAULT_D):
    """Plain product of diagram sums at a common root (no new pairings)."""
    result = [term_to_diagram(ONE)]
    for f in factors:
        out = []
        for x in result:
            for y in f:
                u, _ = _disjoint_union([x, y])
                out.append(tag_divergences(_merge_vertices(u, u.roots[0], [u.roots[1]]), d))
        result = collect(out)
    return result


def integrate(terms: Iterable[ContractedTerm]) -> list[ContractedTerm]:
    """``P_χ ⊛`` applied to single-root diagrams: new root above the old."""
    out = []
    for t in terms:
        if len(t.roots) != 1:
            raise ValueError("integrate expects single-root diagrams")
        n = t.n_vertices
        perm = {v: v + 1 for v in range(n)}
        out.append(ContractedTerm(
            n + 1, (0,),
            ((0, t.roots[0] + 1),) + tuple((u + 1, v + 1) for u, v in t.p_edges),
            tuple((u + 1, v + 1) for u, v in t.q_edges),
            (0,) + t.legs, ((),) + t.smooth,
            tuple(s.remap(perm) for s in t.symbols), t.coefficient,
            None if t.arg is None else t.arg + 1))
    return collect(out)


UNIT = "unit"


def gamma_bulletQ(factors: Sequence, d: int | None = DEFAULT_D,
                  max_open: int | None = None) -> list[ContractedTerm]:
    """Multi-local product of Γ_·Q-normalised factors.

    Args:
        factors: Tensor word; each entry is a list of single-root diagrams,
            a :class:`Term` (normalised with :func:`gamma_cdotQ` first), or
            :data:`UNIT`, the empty word, which is dropped.
        d: Dimension for divergence tagging.
        max_open: Optional bound on open legs of the output.

    Returns:
        Multi-root diagrams (root ``i`` belongs to the i-th non-unit factor)
        summed over pairings between legs of different factors only.
    """
    normalised = []
    for f in factors:
        if isinstance(f, str) and f == UNIT:
            continue
        if isinstance(f, Term):
            f = gamma_cdotQ(f, d)
        normalised.append(list(f))
    if not normalised:
        return [term_to_diagram(ONE)]
    out = []

    def rec(i, chosen):
        if i == len(normalised):
            u, groups = _disjoint_union(chosen)
            cross = lambda a, b: groups[a] != groups[b]  # noqa: E731
            for m, w in pairing_patterns(u.legs, cross, max_open):
                out.append(tag_divergences(_apply_pattern(u, m, w), d))
            return
        for x in normalised[i]:
            rec(i + 1, chosen + [x])

    rec(0, [])
    return collect(out)


def evaluate_at_zero(terms: Iterable[ContractedTerm]) -> list[ContractedTerm]:
    """Keep only diagrams without open legs (the φ = 0 evaluation)."""
    return collect(t for t in terms if t.total_legs == 0)


# ---------------------------------------------------------------------------
# correlations and the renormalised equation


class DiagramSeries:
    """Truncated λ-series whose coefficients are diagram sums."""

    def __init__(self, order: int, coefficients: Mapping[int, list] | None = None):
        if order < 0:
            raise ValueError("order must be non-negative")
        self.order = order
        self._c = {j: collect(v) for j, v in (coefficients or {}).items() if j <= order}

    def __getitem__(self, j: int) -> list[ContractedTerm]:
        if j < 0 or j > self.order:
            raise KeyError(j)
        return list(self._c.get(j, []))

    def orders(self):
        return range(self.order + 1)

    def __eq__(self, other):
        return (isinstance(other, DiagramSeries) and self.order == other.order
                and all(equal_sums(self[j], other[j]) for j in self.orders()))


def gamma_series(J: int, d: int | None = DEFAULT_D) -> DiagramSeries:
    """``Γ_·Q`` applied order by order to the perturbative solution."""
    F = expand_solution(J)
    return DiagramSeries(J, {j: gamma_cdotQ(F[j], d) for j in range(J + 1)})


def two_point_correlation(J: int, d: int | None = DEFAULT_D) -> DiagramSeries:
    """ω₂ up to order J: ``Σ_j Γ_•Q(Γ_·Q F_j ⊗ Γ_·Q F_{k-j})`` at order k."""
    if not isinstance(J, int) or J < 0:
        raise ValueError("J must be a non-negative integer")
    G = gamma_series(J, d)
    coefs = {}
    for k in range(J + 1):
        acc = []
        for j in range(k + 1):
            acc.extend(gamma_bulletQ([G[j], G[k - j]], d))
        coefs[k] = collect(acc)
    return DiagramSeries(J, coefs)


def swap_roots(terms: Iterable[ContractedTerm]) -> list[ContractedTerm]:
    """Exchange the two external slots of two-root diagrams."""
    return collect(replace(t, roots=(t.roots[1], t.roots[0])) for t in terms)


def _argument_vertex(ct: ContractedTerm) -> int:
    root = ct.roots[0]
    if ct.legs[root] > 0:
        return root
    children = defaultdict(list)
    for u, v in ct.p_edges:
        children[u].append(v)
    # breadth-first from the root; ties broken by canonical numbering
    frontier = [root]
    while frontier:
        hits = sorted(v for v in frontier if ct.legs[v] > 0)
        if hits:
            return hits[0]
        frontier = sorted(w for v in frontier for w in children[v])
    raise ValueError("diagram has no open leg to act on")


def apply_operator(ops: Iterable[ContractedTerm], psi: Iterable[ContractedTerm],
                   d: int | None = DEFAULT_D) -> list[ContractedTerm]:
    """Apply an operator sum (diagrams with ``arg``) to single-root diagrams.

    The argument diagram's root is glued onto the operator's argument vertex.
    """
    out = []
    for op in ops:
        for x in psi:
            u, _ = _disjoint_union([replace(op, arg=None), x])
            merged = _merge_vertices(u, op.arg, [u.roots[1]])
            out.append(tag_divergences(replace(merged, roots=merged.roots[:1]), d))
    return collect(out)


def renormalized_equation(J: int, d: int | None = DEFAULT_D) -> dict[int, list[ContractedTerm]]:
    """Counterterm operators M_1..M_J of the renormalised equation.

    Matches ``Γ_·Q(Ψ)`` against ``Φ - λ P⊛Ψ³ - P⊛(MΨ)`` order by order. The
    new part at order n has the form ``-P⊛(M_n Φ)``; one open leg is then
    promoted to the operator argument: a leg at the top vertex when there is
    one (multiplication operator), otherwise the nearest leg below it
    (integral operator).

    Raises:
        ArithmeticError: if the matching leaves a residual, or if an
            extracted operator has an odd number of remaining legs.
    """
    if not isinstance(J, int) or J < 1:
        raise ValueError("J must be an integer >= 1")
    G = gamma_series(J, d)
    M: dict[int, list[ContractedTerm]] = {}
    for n in range(1, J + 1):
        rhs = []
        for j1 in range(n):
            for j2 in range(n - j1):
                j3 = n - 1 - j1 - j2
                rhs.extend(pointwise_product(G[j1], G[j2], G[j3], d=d))
        for k in range(1, n):
            rhs.extend(apply_operator(M[k], G[n - k], d))
        known = scale(integrate(collect(rhs)), -1)
        residual = subtract(G[n], known)
        ops = []
        for t in residual:
            root = t.roots[0]
            outs = [e for e in t.p_edges if e[0] == root]
            touching = [s for s in t.symbols if root in s.vertices]
            if (t.legs[root] or t.smooth[root] or len(outs) != 1 or touching
                    or any(root in e for e in t.q_edges)):
                raise ArithmeticError(f"order {n}: residual term not of the form P⊛(MΦ): {t}")
            body = _drop_vertex(replace(t, p_edges=tuple(e for e in t.p_edges if e != outs[0])),
                                root)
            a = _argument_vertex(body)
            legs = list(body.legs)
            legs[a] -= 1
            op = replace(body, legs=tuple(legs), arg=a, coefficient=-body.coefficient)
            if op.total_legs % 2:
                raise ArithmeticError(f"order {n}: operator with odd leg count {op}")
            ops.append(op)
        M[n] = collect(ops)
        check = subtract(residual, scale(integrate(apply_operator(M[n], G[0], d)), -1))
        if check:
            raise ArithmeticError(f"order {n}: non-zero matching residual")
    return M


def _drop_vertex(ct: ContractedTerm, v: int) -> ContractedTerm:
    """Remove an isolated vertex; the first remaining P-parentless vertex becomes root."""
    keep = [w for w in range(ct.n_vertices) if w != v]
    perm = {w: i for i, w in enumerate(keep)}
    has_parent = {b for _, b in ct.p_edges}
    roots = [w for w in keep if w not in has_parent]
    if len(roots) != 1:
        raise ArithmeticError("operator body is not a rooted tree")
    return ContractedTerm(
        len(keep), (perm[roots[0]],),
        tuple((perm[a], perm[b]) for a, b in ct.p_edges),
        tuple(_pair(perm[a], perm[b]) for a, b in ct.q_edges),
        tuple(ct.legs[w] for w in keep), tuple(ct.smooth[w] for w in keep),
        tuple(s.remap(perm) for s in ct.symbols), ct.coefficient,
        None if ct.arg is None else perm[ct.arg])


# ---------------------------------------------------------------------------
# renormalisation shifts


def _parse_shift(value) -> list[tuple[Fraction, tuple[str, ...]]]:
    if isinstance(value, str):
        return [(Fraction(1), (value,))]
    out = []
    for c, labels in value:
        labels = (labels,) if isinstance(labels, str) else tuple(labels)
        out.append((Fraction(c), labels))
    return out


KNOWN_SYMBOLS = ("C1", "C2", "Q2")


def apply_renorm_shift(terms: Iterable[ContractedTerm], shifts: Mapping,
                       d: int | None = DEFAULT_D) -> list[ContractedTerm]:
    """Switch to another admissible choice of renormalisation constants.

    Every occurrence of a symbol ``S`` listed in ``shifts`` is replaced by
    ``S + Σ c·labels``. For a single-vertex symbol the added piece is a
    product of smooth labels at its vertex; for a multi-vertex symbol it is
    a local term (the symbol's vertices are identified, as for a delta
    kernel) carrying the labels.

    Args:
        terms: Diagram sum.
        shifts: ``{symbol name: polynomial}`` where a polynomial is a label
            string or a list of ``(coefficient, labels)`` pairs.
        d: Dimension for re-tagging after local merges.

    Raises:
        KeyError: if a shift names a symbol that is neither standard nor
            present in ``terms``.
    """
    terms = list(terms)
    present = {s.name for t in terms for s in t.symbols}
    parsed = {}
    for name, value in shifts.items():
        if name not in present and name not in KNOWN_SYMBOLS:
            raise KeyError(f"unknown renormalisation symbol {name!r}")
        parsed[name] = _parse_shift(value)
    if not parsed:
        return collect(terms)

    def expand(t, pending):
        if not pending:
            yield tag_divergences(t, d)
            return
        sym, rest = pending[0], pending[1:]
        yield from expand(t, rest)
        for c, labels in parsed[sym.name]:
            t2, perm = _replace_symbol(t, sym, c, labels)
            yield from expand(t2, [x.remap(perm) for x in rest])

    out = []
    for t in terms:
        out.extend(expand(t, [s for s in t.symbols if s.name in parsed]))
    return collect(out)


def _replace_symbol(t: ContractedTerm, s: Symbol, c: Fraction, labels):
    syms = list(t.symbols)
    syms.remove(s)
    keep = min(s.vertices)
    base = replace(t, symbols=tuple(syms), coefficient=t.coefficient * c)
    sv = set(s.vertices)
    base = replace(base, p_edges=tuple(e for e in base.p_edges
                                       if not (e[0] in sv and e[1] in sv)))
    base, perm = _merge_vertices(base, keep, [v for v in s.vertices if v != keep],
                                 return_perm=True)
    labels_now = list(base.smooth)
    k = perm[keep]
    labels_now[k] = tuple(sorted(labels_now[k] + tuple(labels)))
    return replace(base, smooth=tuple(labels_now)), perm


def gamma_inverse(terms: Iterable[ContractedTerm], d: int | None = DEFAULT_D) -> dict[Term, Fraction]:
    """Find a combination τ of terms with ``Γ_·Q(τ) = terms``.

    Works on single-root tree diagrams; single-vertex symbols are read back
    as smooth labels. ``Γ_·Q`` is unitriangular with respect to the number
    of open legs, so peeling off the diagrams with the most legs terminates.

    Raises:
        ValueError: if a leading diagram still contains covariance edges or
            multi-vertex symbols (the input is not in the image).
    """
    rem = collect(terms)
    result: dict[Term, Fraction] = defaultdict(Fraction)
    guard = 0
    while rem:
        guard += 1
        if guard > 10_000:
            raise RuntimeError("gamma_inverse did not terminate")
        top = max(t.total_legs for t in rem)
        lead = [t for t in rem if t.total_legs == top]
        step = []
        for t in lead:
            if t.q_edges or any(len(s.vertices) > 1 for s in t.symbols):
                raise ValueError(f"diagram not in the image of Γ: {t}")
            term = _diagram_to_term(t)
            result[term] += t.coefficient
            step.extend(x.scaled(t.coefficient) for x in gamma_cdotQ(term, d))
        rem = subtract(rem, step)
    return {t: c for t, c in result.items() if c != 0}


def _diagram_to_term(t: ContractedTerm) -> Term:
    children = defaultdict(list)
    for u, v in t.p_edges:
        children[u].append(v)
    sym_at = defaultdict(list)
    for s in t.symbols:
        sym_at[s.vertices[0]].append(s.name)

    def build(v):
        parts = [PHI] * t.legs[v] + [smooth(x) for x in t.smooth[v]]
        parts += [smooth(x) for x in sym_at[v]]
        parts += [integ(build(w)) for w in children[v]]
        return prod(*parts)

    return build(t.roots[0])


# ---------------------------------------------------------------------------
# rendering and serialisation


def to_text(ct: ContractedTerm) -> str:
    """One-line description, e.g. ``3 · [v0: Φ C1]``."""
    parts = []
    sym_at = defaultdict(list)
    for s in ct.symbols:
        if len(s.vertices) == 1:
            sym_at[s.vertices[0]].append(s.name)
    for v in range(ct.n_vertices):
        bits = []
        if ct.legs[v]:
            bits.append("Φ" if ct.legs[v] == 1 else f"Φ^{ct.legs[v]}")
        bits.extend(ct.smooth[v])
        bits.extend(sym_at[v])
        tag = f"v{v}"
        if v in ct.roots:
            tag += f"(root{ct.roots.index(v)})" if len(ct.roots) > 1 else "(root)"
        if ct.arg == v:
            tag += "(arg)"
        parts.append(f"{tag}: {' '.join(bits) or '1'}")
    edges = [f"P{u}->{v}" for u, v in ct.p_edges] + [f"Q{u}-{v}" for u, v in ct.q_edges]
    edges += [f"{s.name}{list(s.vertices)}" for s in ct.symbols if len(s.vertices) > 1]
    body = "; ".join(parts)
    if edges:
        body += " | " + " ".join(edges)
    return f"{ct.coefficient} · [{body}]"


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(y) for y in x)
    return x


def _symbol_json(s: Symbol) -> dict:
    return {"name": s.name, "key": s.key, "vertices": list(s.vertices),
            "q_edges": [list(e) for e in s.q_edges], "rho": s.rho,
            "ambiguity_dim": s.ambiguity_dim, "inner": [_symbol_json(x) for x in s.inner]}


def _symbol_from_json(d: Mapping) -> Symbol:
    return Symbol(d["name"], _tuplify(d["key"]), tuple(d["vertices"]),
                  tuple(tuple(e) for e in d["q_edges"]), d["rho"], d["ambiguity_dim"],
                  tuple(_symbol_from_json(x) for x in d["inner"]))


def diagram_to_json(ct: ContractedTerm) -> dict:
    c = Fraction(ct.coefficient)
    return {
        "vertices": ct.n_vertices,
        "roots": list(ct.roots),
        "edges": [{"kind": "p", "from": u, "to": v} for u, v in ct.p_edges]
        + [{"kind": "q", "u": u, "v": v} for u, v in ct.q_edges],
        "legs": [[v, n] for v, n in enumerate(ct.legs) if n],
        "smooth": [[v, list(x)] for v, x in enumerate(ct.smooth) if x],
        "symbols": [_symbol_json(s) for s in ct.symbols],
        "coefficient": {"num": str(c.numerator), "den": str(c.denominator)},
        "arg": ct.arg,
        "text": to_text(ct),
    }


def diagram_from_json(d: Mapping) -> ContractedTerm:
    n = d["vertices"]
    legs = [0] * n
    for v, k in d["legs"]:
        legs[v] = k
    labels: list[tuple] = [()] * n
    for v, xs in d["smooth"]:
        labels[v] = tuple(xs)
    p = tuple((e["from"], e["to"]) for e in d["edges"] if e["kind"] == "p")
    q = tuple(sorted((e["u"], e["v"]) for e in d["edges"] if e["kind"] == "q"))
    c = Fraction(int(d["coefficient"]["num"]), int(d["coefficient"]["den"]))
    return ContractedTerm(n, tuple(d["roots"]), p, q, tuple(legs), tuple(labels),
                          tuple(_symbol_from_json(s) for s in d["symbols"]), c, d["arg"])


def diagram_to_dot(ct: ContractedTerm, name: str = "G") -> str:
    """Graphviz rendering: P-edges solid arrows, Q-edges dashed, symbols boxed."""
    lines = [f"digraph {name} {{", f'  label="{ct.coefficient}";']
    for v in range(ct.n_vertices):
        lab = [f"v{v}"]
        if ct.legs[v]:
            lab.append(f"Φ^{ct.legs[v]}")
        lab.extend(ct.smooth[v])
        shape = "doublecircle" if v in ct.roots else "circle"
        lines.append(f'  v{v} [shape={shape}, label="{" ".join(lab)}"];')
    for u, v in ct.p_edges:
        lines.append(f"  v{u} -> v{v};")
    for u, v in ct.q_edges:
        lines.append(f"  v{u} -> v{v} [dir=none, style=dashed];")
    for i, s in enumerate(ct.symbols):
        lines.append(f'  s{i} [shape=box, label="{s.name}"];')
        for v in s.vertices:
            lines.append(f"  s{i} -> v{v} [dir=none, style=dotted];")
    lines.append("}")
    return "\n".join(lines)
