"""Decorated rooted trees for the pointwise functional algebra.

A :class:`Term` is built from five node kinds:

* ``phi``: the generator functional Φ.
* ``one``: the unit functional 𝟏.
* ``smooth``: a named smooth function (for instance ``chi`` or ``c2``).
* ``prod``: the pointwise product of at least two children.
* ``integ``: application of the cut-off parametrix, ``P_χ ⊛ child``.

Terms are immutable and always stored in canonical form, so structural
equality coincides with equality of the functionals they denote (up to the
commutative and associative laws of the product).

Example:
    >>> t = prod(PHI, integ(prod(PHI, PHI, PHI)), PHI)
    >>> grading(t)
    (1, 5)
    >>> str(t)
    'Φ²·P⊛(Φ³)'
"""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from itertools import product as cartesian
from typing import Iterable, Iterator, Mapping

_KIND_RANK = {"one": 0, "smooth": 1, "phi": 2, "integ": 3, "prod": 4}


class Term:
    """Immutable node of a canonical term tree.

    Use the module constructors (:data:`PHI`, :data:`ONE`, :func:`smooth`,
    :func:`prod`, :func:`integ`) rather than calling this class directly;
    they enforce flattening, unit absorption and child ordering.
    """

    __slots__ = ("kind", "label", "children", "_key", "_hash", "_grading")

    def __init__(self, kind: str, label: str | None = None, children: tuple = ()):
        if kind not in _KIND_RANK:
            raise ValueError(f"unknown term kind {kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "children", tuple(children))
        if kind == "phi":
            g = (0, 1)
        elif kind in ("one", "smooth"):
            g = (0, 0)
        elif kind == "integ":
            cl, ck = self.children[0].grading
            g = (cl + 1, ck)
        else:
            g = (sum(c.grading[0] for c in self.children),
                 sum(c.grading[1] for c in self.children))
        object.__setattr__(self, "_grading", g)
        key = (_KIND_RANK[kind], g, label or "", tuple(c.key for c in self.children))
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))

    def __setattr__(self, name, value):
        raise AttributeError("Term is immutable")

    @property
    def key(self) -> tuple:
        """Total-order sort key; equal keys mean identical canonical trees."""
        return self._key

    @property
    def grading(self) -> tuple[int, int]:
        return self._grading

    def __eq__(self, other) -> bool:
        return isinstance(other, Term) and self._key == other._key

    def __lt__(self, other: "Term") -> bool:
        return self._key < other._key

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Term({self})"

    def __str__(self) -> str:
        return to_text(self)


PHI = Term("phi")
ONE = Term("one")


def smooth(label: str) -> Term:
    """Named element of the smooth-function ring."""
    if not label:
        raise ValueError("smooth label must be non-empty")
    return Term("smooth", label=label)


def integ(child: Term) -> Term:
    """``P_χ ⊛ child``."""
    return Term("integ", children=(child,))


def prod(*factors: Term) -> Term:
    """Canonical pointwise product: flattened, sorted, with 𝟏 absorbed."""
    flat: list[Term] = []
    for f in factors:
        if f.kind == "prod":
            flat.extend(f.children)
        elif f.kind != "one":
            flat.append(f)
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Term("prod", children=tuple(sorted(flat)))


def phi_power(k: int) -> Term:
    """Φ^k, with Φ^0 = 𝟏."""
    if k < 0:
        raise ValueError("negative power")
    return prod(*([PHI] * k)) if k else ONE


def canonicalize(t: Term) -> Term:
    """Rebuild ``t`` bottom-up through the canonical constructors.

    Terms produced by this module are already canonical, so this is the
    identity on them; it exists for trees assembled by hand via ``Term``.
    """
    if t.kind in ("phi", "one"):
        return PHI if t.kind == "phi" else ONE
    if t.kind == "smooth":
        return smooth(t.label)
    if t.kind == "integ":
        return integ(canonicalize(t.children[0]))
    return prod(*(canonicalize(c) for c in t.children))


def grading(t: Term) -> tuple[int, int]:
    """Return the bigrade ``(l, k)``: parametrix count and Φ-degree."""
    return t.grading


def phi_parity(t) -> str:
    """Classify Φ-degrees as ``"odd"``, ``"even"`` or ``"mixed"``.

    Args:
        t: A single :class:`Term`, or an iterable of terms / ``(coef, term)``
            pairs describing a linear combination.
    """
    if isinstance(t, Term):
        terms = [t]
    else:
        terms = [x[1] if isinstance(x, tuple) else x for x in t]
    parities = {x.grading[1] % 2 for x in terms}
    if parities == {1}:
        return "odd"
    if parities == {0}:
        return "even"
    return "mixed"


def to_text(t: Term) -> str:
    """Compact human-readable rendering used in reports."""
    if t.kind == "phi":
        return "Φ"
    if t.kind == "one":
        return "𝟏"
    if t.kind == "smooth":
        return t.label
    if t.kind == "integ":
        return f"P⊛({to_text(t.children[0])})"
    parts = []
    i = 0
    ch = t.children
    while i < len(ch):
        j = i
        while j < len(ch) and ch[j] == ch[i]:
            j += 1
        s = to_text(ch[i])
        parts.append(s if j - i == 1 else f"{s}{_superscript(j - i)}")
        i = j
    return "·".join(parts)


_SUP = str.maketrans("0123456789", "⁰¹²³⁴⁵⁶⁷⁸⁹")


def _superscript(n: int) -> str:
    return str(n).translate(_SUP)


# ---------------------------------------------------------------------------
# linear combinations


Combination = dict  # Term -> Fraction


def combine(pairs: Iterable[tuple[Fraction, Term]]) -> dict[Term, Fraction]:
    """Collect like terms and drop zeros."""
    acc: dict[Term, Fraction] = defaultdict(Fraction)
    for c, t in pairs:
        acc[t] += Fraction(c)
    return {t: c for t, c in acc.items() if c != 0}


def multiply(*combos: Mapping[Term, Fraction]) -> dict[Term, Fraction]:
    """Multilinear pointwise product of linear combinations."""
    out: list[tuple[Fraction, Term]] = []
    for picks in cartesian(*(list(c.items()) for c in combos)):
        coef = Fraction(1)
        for _, c in picks:
            coef *= c
        out.append((coef, prod(*(t for t, _ in picks))))
    return combine(out)


class FormalSeries:
    """Truncated power series in λ with exact rational coefficients.

    Attributes:
        order: Truncation order J; coefficients of λ^j for j ≤ J are kept.
    """

    def __init__(self, order: int, coefficients: Mapping[int, Mapping] | None = None):
        if order < 0:
            raise ValueError("truncation order must be non-negative")
        self.order = order
        self._coef: dict[int, dict] = {}
        for j, combo in (coefficients or {}).items():
            if j <= order:
                cleaned = {t: Fraction(c) for t, c in combo.items() if c != 0}
                if cleaned:
                    self._coef[j] = cleaned

    def __getitem__(self, j: int) -> dict:
        if j < 0 or j > self.order:
            raise KeyError(j)
        return dict(self._coef.get(j, {}))

    def items(self, j: int) -> list[tuple[Fraction, object]]:
        """Sorted ``(coefficient, term)`` pairs at order ``j``."""
        return sorted(((c, t) for t, c in self._coef.get(j, {}).items()),
                      key=lambda ct: ct[1].key)

    def orders(self) -> Iterator[int]:
        return iter(range(self.order + 1))

    def truncate(self, order: int) -> "FormalSeries":
        return FormalSeries(min(order, self.order), self._coef)

    def __eq__(self, other) -> bool:
        return (isinstance(other, FormalSeries) and self.order == other.order
                and self._coef == other._coef)

    def __repr__(self) -> str:
        return f"FormalSeries(order={self.order}, nonzero_orders={sorted(self._coef)})"


def expand_solution(J: int) -> FormalSeries:
    """Perturbative coefficients F_0..F_J of the cubic integral equation.

    ``F_0 = Φ`` and ``F_j = -Σ_{j1+j2+j3=j-1} P_χ⊛(F_j1 F_j2 F_j3)``, expanded
    over ordered triples and collected.

    Example:
        >>> [(str(c), str(t)) for c, t in expand_solution(2).items(2)]
        [('3', 'P⊛(Φ²·P⊛(Φ³))')]
    """
    if not isinstance(J, int) or J < 0:
        raise ValueError("J must be a non-negative integer")
    F: list[dict[Term, Fraction]] = [{PHI: Fraction(1)}]
    for j in range(1, J + 1):
        acc: list[tuple[Fraction, Term]] = []
        for j1 in range(j):
            for j2 in range(j - j1):
                j3 = j - 1 - j1 - j2
                for t, c in multiply(F[j1], F[j2], F[j3]).items():
                    acc.append((-c, integ(t)))
        F.append(combine(acc))
    return FormalSeries(J, dict(enumerate(F)))


# ---------------------------------------------------------------------------
# JSON


def _frac_json(c: Fraction) -> dict:
    c = Fraction(c)
    return {"num": str(c.numerator), "den": str(c.denominator)}


def _frac_from_json(d: Mapping) -> Fraction:
    return Fraction(int(d["num"]), int(d["den"]))


def term_to_json(t: Term) -> dict:
    if t.kind in ("phi", "one"):
        return {"kind": t.kind}
    if t.kind == "smooth":
        return {"kind": "smooth", "label": t.label}
    return {"kind": t.kind, "children": [term_to_json(c) for c in t.children]}


def term_from_json(d: Mapping) -> Term:
    kind = d["kind"]
    if kind == "phi":
        return PHI
    if kind == "one":
        return ONE
    if kind == "smooth":
        return smooth(d["label"])
    children = [term_from_json(c) for c in d["children"]]
    if kind == "integ":
        if len(children) != 1:
            raise ValueError("integ node needs exactly one child")
        return integ(children[0])
    if kind == "prod":
        return prod(*children)
    raise ValueError(f"unknown kind {kind!r}")


def series_to_json(s: FormalSeries) -> dict:
    return {
        "order": s.order,
        "coefficients": {
            str(j): [{"coef": _frac_json(c), "term": term_to_json(t), "text": str(t)}
                     for c, t in s.items(j)]
            for j in s.orders()
        },
    }


def series_from_json(d: Mapping) -> FormalSeries:
    coefs = {}
    for j, entries in d["coefficients"].items():
        coefs[int(j)] = combine((_frac_from_json(e["coef"]), term_from_json(e["term"]))
                                for e in entries)
    return FormalSeries(int(d["order"]), coefs)
