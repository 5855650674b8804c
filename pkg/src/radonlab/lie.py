"""Lie brackets, Campbell-Hausdorff, weighted closures and span checks.

A vector field on ``R^n`` is a tuple of ``n`` polynomials; the field acts on
functions as the derivation ``X f = sum_j X_j d_j f``.  Brackets use the
derivation convention ``[X, Y] f = X(Y f) - Y(X f)``, so that
``[d1, x1 d2] = d2``.

Truncation.  When a ``budget`` ``B`` is given, a field of formal degree
``d`` is kept to x-degree ``B - |d|_1``.  Brackets lower this cap additively,
which is exactly what the missing high-order terms of the inputs can affect,
so every kept coefficient is correct.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import DimensionError, Poly
from .linalg import Echelon

Field = tuple[Poly, ...]


# ---------------------------------------------------------------------------
# raw field algebra (also used on t-dependent fields, hence ``xoff``)


def apply_field(X: Sequence[Poly], f: Poly, xoff: int = 0, keep=None) -> Poly:
    """The derivative ``X f`` with the x-variables starting at index ``xoff``."""
    out = Poly.zero(f.nvars)
    for j, Xj in enumerate(X):
        if not Xj:
            continue
        df = f.diff(xoff + j)
        if df:
            out = out + Xj.mul(df, keep)
    return out


def field_bracket(X: Sequence[Poly], Y: Sequence[Poly], xoff: int = 0, keep=None) -> Field:
    if len(X) != len(Y):
        raise DimensionError("fields live on different spaces")
    return tuple(apply_field(X, Yi, xoff, keep) - apply_field(Y, Xi, xoff, keep) for Xi, Yi in zip(X, Y))


def field_is_zero(X: Sequence[Poly]) -> bool:
    return not any(X)


def zero_field(n: int, nvars: int | None = None) -> Field:
    return tuple(Poly.zero(n if nvars is None else nvars) for _ in range(n))


def coord_field(n: int, i: int, coeff: Poly | None = None) -> Field:
    """``coeff * d_i`` (default coefficient 1)."""
    c = coeff if coeff is not None else Poly.const(n, 1)
    return tuple(c if j == i else Poly.zero(n) for j in range(n))


def field_add(X: Sequence[Poly], Y: Sequence[Poly]) -> Field:
    return tuple(a + b for a, b in zip(X, Y))


def field_scale(X: Sequence[Poly], c) -> Field:
    return tuple(p.scale(c) for p in X)


def field_truncate(X: Sequence[Poly], cap: int | None) -> Field:
    if cap is None:
        return tuple(X)
    return tuple(p.filter(lambda m: sum(m) <= cap) for p in X)


def field_to_str(X: Sequence[Poly], names: Sequence[str] | None = None) -> str:
    n = len(X)
    names = names or [f"x{i + 1}" for i in range(n)]
    parts = []
    for i, p in enumerate(X):
        if not p:
            continue
        s = p.to_str(names)
        if s in ("1", "-1"):
            parts.append(f"{s[:-1]}d{i + 1}")
            continue
        if len(p.terms) > 1 or s.startswith("-"):
            s = f"({s})"
        parts.append(f"{s}*d{i + 1}")
    return " + ".join(parts) if parts else "0"


def field_eval(X: Sequence[Poly], point: Sequence) -> np.ndarray:
    return np.array([float(p.eval_exact(point)) if all(isinstance(v, (int, Fraction)) for v in point)
                     else float(p.eval_numeric(point)) for p in X])


def field_eval_exact(X: Sequence[Poly], point: Sequence) -> tuple[Fraction, ...]:
    return tuple(p.eval_exact(point) for p in X)


def field_vector(X: Sequence[Poly]) -> dict:
    """Coefficient vector keyed by ``(component, monomial)``."""
    return {(i, m): c for i, p in enumerate(X) for m, c in p.terms.items()}


# ---------------------------------------------------------------------------
# weighted fields


@dataclass(frozen=True)
class WeightedField:
    """A polynomial vector field paired with a nonzero formal degree in ``N^nu``."""

    X: Field
    d: tuple[int, ...]
    tag: str = ""

    def __post_init__(self):
        X = tuple(self.X)
        d = tuple(int(v) for v in self.d)
        if not X:
            raise DimensionError("a vector field needs at least one component")
        nv = X[0].nvars
        if any(p.nvars != nv for p in X) or nv != len(X):
            raise DimensionError("a vector field on R^n has n components in n variables")
        if any(v < 0 for v in d) or not any(d):
            raise ValueError(f"formal degree {d} must be a nonzero vector in N^nu")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def nu(self) -> int:
        return len(self.d)

    @property
    def size(self) -> int:
        return sum(self.d)

    def is_zero(self) -> bool:
        return field_is_zero(self.X)

    def key(self):
        return (self.X, self.d)

    def __eq__(self, other):
        if not isinstance(other, WeightedField):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def truncated(self, budget: int | None) -> "WeightedField":
        if budget is None:
            return self
        return WeightedField(field_truncate(self.X, budget - self.size), self.d, self.tag)

    def eval(self, point) -> np.ndarray:
        return np.array([p.eval_numeric(point) for p in self.X], dtype=float)

    def __str__(self):
        return f"({field_to_str(self.X)}, {self.d})"


def lie_bracket(a: WeightedField, b: WeightedField, budget: int | None = None) -> WeightedField:
    """``([X_a, X_b], d_a + d_b)``, truncated to the budget cap of the sum degree."""
    if a.n != b.n:
        raise DimensionError("fields live on different spaces")
    if a.nu != b.nu:
        raise DimensionError("formal degrees have different numbers of parameters")
    d = tuple(i + j for i, j in zip(a.d, b.d))
    keep = None
    if budget is not None:
        cap = budget - sum(d)
        keep = lambda m: sum(m) <= cap
    X = field_bracket(a.X, b.X, 0, keep)
    tag = f"[{a.tag},{b.tag}]" if (a.tag or b.tag) else ""
    return WeightedField(X, d, tag)


# ---------------------------------------------------------------------------
# Campbell-Hausdorff

# log(e^a e^b) = sum_k Z_k with Z_k homogeneous of degree k in (a, b).
# Each entry is (coefficient, word) for the right-normed bracket of the word.
_BCH_TERMS: dict[int, list[tuple[Fraction, str]]] = {
    1: [(Fraction(1), "a"), (Fraction(1), "b")],
    2: [(Fraction(1, 2), "ab")],
    3: [(Fraction(1, 12), "aab"), (Fraction(-1, 12), "bab")],
    4: [(Fraction(-1, 24), "baab")],
}
BCH_MAX_ORDER = 4


def bch_terms(order: int) -> list[tuple[Fraction, str]]:
    if order < 1:
        raise ValueError("order must be >= 1")
    if order > BCH_MAX_ORDER:
        raise ValueError(f"Campbell-Hausdorff terms are tabulated only through order {BCH_MAX_ORDER}")
    return [term for k in range(1, order + 1) for term in _BCH_TERMS[k]]


def bch_log(a, b, order: int, bracket: Callable | None = None, add: Callable | None = None,
            scale: Callable | None = None):
    """``log(e^a e^b)`` truncated at bracket order ``order``.

    ``a`` and ``b`` are vector fields (tuples of polynomials) unless custom
    ``bracket``/``add``/``scale`` operations are supplied, in which case any
    Lie algebra element type works (e.g. t-graded field series).
    """
    bracket = bracket or (lambda u, v: field_bracket(u, v))
    add = add or field_add
    scale = scale or field_scale
    cache: dict[str, object] = {"a": a, "b": b}

    def word(w: str):
        # right-normed: "aab" -> [a, [a, b]]
        if w not in cache:
            cache[w] = bracket(cache[w[0]], word(w[1:]))
        return cache[w]

    out = None
    for c, w in bch_terms(order):
        term = scale(word(w), c)
        out = term if out is None else add(out, term)
    return out


# ---------------------------------------------------------------------------
# closures


@dataclass(frozen=True)
class ClosureSet:
    elements: tuple[WeightedField, ...]
    cutoff: int
    flavor: str  # "L" or "L0"
    budget: int | None = None
    complete: bool = True  # no nonzero bracket was discarded by the cutoff
    generators: tuple[WeightedField, ...] = ()

    def slice(self, d0: Sequence[int]) -> list[WeightedField]:
        d0 = tuple(d0)
        return [w for w in self.elements if w.d == d0]

    def degrees(self) -> list[tuple[int, ...]]:
        return sorted({w.d for w in self.elements}, key=lambda d: (sum(d), d))

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


def lie_closure(S: Iterable[WeightedField], cutoff: int, flavor: str = "L",
                budget: int | None = None) -> ClosureSet:
    """Bracket closure of ``S`` with ``|d|_1 <= cutoff``, dropping zero fields.

    ``flavor="L"`` brackets every pair of members; ``"L0"`` brackets members of
    ``S`` against closure members only (left-normed words).  Since
    ``[Y, X] = -[X, Y]``, each unordered pair is bracketed once.
    """
    if flavor not in ("L", "L0"):
        raise ValueError("flavor must be 'L' or 'L0'")
    S = [w.truncated(budget) for w in S]
    if S and cutoff < max(w.size for w in S):
        raise ValueError("cutoff must be at least the largest generator degree")
    gens = [w for w in _dedupe(S) if not w.is_zero()]
    elements: list[WeightedField] = []
    seen: set = set()
    index: dict = {}
    complete = True

    def add(w: WeightedField) -> bool:
        if w.key() in seen:
            return False
        seen.add(w.key())
        index[w.key()] = len(elements)
        elements.append(w)
        return True

    for g in gens:
        add(g)
    queue = list(elements)
    tried: set = set()
    while queue:
        new = queue.pop(0)
        partners = gens if flavor == "L0" else list(elements)
        for other in partners:
            if flavor == "L":
                pair = frozenset((new.key(), other.key()))
                if new.key() == other.key() or pair in tried:
                    continue
                tried.add(pair)
            first, second = other, new
            if flavor == "L" and index[other.key()] > index[new.key()]:
                first, second = new, other
            if sum(first.d) + sum(second.d) > cutoff:
                if budget is None or budget - sum(first.d) - sum(second.d) >= 0:
                    if not lie_bracket(first, second, budget).is_zero():
                        complete = False
                else:
                    complete = False
                continue
            br = lie_bracket(first, second, budget)
            if br.is_zero():
                continue
            if add(br):
                queue.append(br)
    return ClosureSet(tuple(elements), cutoff, flavor, budget, complete, tuple(gens))


def _dedupe(S: Iterable[WeightedField]) -> list[WeightedField]:
    out, seen = [], set()
    for w in S:
        if w.key() not in seen:
            seen.add(w.key())
            out.append(w)
    return out


# ---------------------------------------------------------------------------
# spans


@dataclass
class SpanResult:
    rank: int
    basis: list  # vectors (point mode) or WeightedFields (symbolic mode)
    exact: bool = True


def span_at_degree(C: ClosureSet | Sequence[WeightedField], d0: Sequence[int],
                   point: Sequence | None = None, tol: float = 1e-10) -> SpanResult:
    """Span of ``{Y : (Y, d0) in C}``.

    With ``point`` given, evaluated vectors are reduced exactly if the point is
    rational and by SVD otherwise.  Without a point, the rational linear span
    of the (truncated) coefficient vectors is computed.
    """
    elems = C.slice(d0) if isinstance(C, ClosureSet) else [w for w in C if w.d == tuple(d0)]
    if point is None:
        ech = Echelon(_vec_order)
        basis = []
        for w in elems:
            if ech.insert(field_vector(w.X)):
                basis.append(w)
        return SpanResult(len(basis), basis)
    return span_of_vectors([w.X for w in elems], point, tol)


def span_of_vectors(fields: Sequence[Field], point: Sequence, tol: float = 1e-10) -> SpanResult:
    if all(isinstance(v, (int, Fraction)) for v in point):
        ech = Echelon()
        basis = []
        for X in fields:
            v = field_eval_exact(X, point)
            if ech.insert({i: c for i, c in enumerate(v) if c}):
                basis.append(v)
        return SpanResult(len(basis), basis)
    if not fields:
        return SpanResult(0, [], exact=False)
    M = np.array([[float(p.eval_numeric(point)) for p in X] for X in fields])
    s = np.linalg.svd(M, compute_uv=False)
    r = int(np.sum(s > tol * max(1.0, s[0] if len(s) else 0)))
    return SpanResult(r, list(M), exact=False)


def _vec_order(k):
    i, m = k
    return (sum(m), m, i)


def in_span(X: Field, fields: Sequence[Field]) -> bool:
    """Exact rational membership of ``X`` in the linear span of ``fields``."""
    ech = Echelon(_vec_order)
    for Y in fields:
        ech.insert(field_vector(Y))
    return not ech.reduce(field_vector(X)).remainder


@dataclass
class HoermanderResult:
    rank: int
    spans: bool
    closure_size: int


def hoermander_check(S: Sequence[WeightedField], x0: Sequence, cutoff: int) -> HoermanderResult:
    """Rank at ``x0`` of all closure elements up to ``cutoff``; spans iff rank = n."""
    S = list(S)
    if not S:
        return HoermanderResult(0, False, 0)
    n = S[0].n
    C = lie_closure(S, max(cutoff, max(w.size for w in S)), "L")
    res = span_of_vectors([w.X for w in C.elements], x0)
    return HoermanderResult(res.rank, res.rank == n, len(C))
