"""Monomial orders, Galligo division, Taylor preparation and finite generation.

Modules are handled at truncation: a submodule generated by ``g_1..g_q`` is
replaced by the rational span of all monomial multiples ``mu * g_k`` reduced
modulo a monomial ideal (the truncation).  Row reduction with pivot on the
least exponent under a generic linear order then gives the attained exponent
set ``E_L`` and the unique remainder whose support avoids it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .core import (
    JetSeries,
    MultiIndex,
    Poly,
    TruncationPolicy,
    _monomials_exact,
    monomials_upto,
    multi_indices,
)
from .linalg import Echelon

Vec = tuple[Poly, ...]


class OrderError(ValueError):
    """The linear order is not injective on the exponents in play."""


class SaturationError(RuntimeError):
    """A truncated computation lost information it needed."""


# ---------------------------------------------------------------------------
# orders


@dataclass(frozen=True)
class OrderWeights:
    """Positive rational weights ``lam``; ``L(a) = sum a_j lam_j``."""

    lam: tuple[Fraction, ...]

    def __post_init__(self):
        lam = tuple(Fraction(v) for v in self.lam)
        if not lam or any(v <= 0 for v in lam):
            raise ValueError("order weights must be positive")
        object.__setattr__(self, "lam", lam)

    def L(self, alpha: Sequence[int]) -> Fraction:
        return sum((a * l for a, l in zip(alpha, self.lam)), Fraction(0))

    def key(self, col) -> tuple:
        """Sort key of a column ``(alpha, i)``: by ``L(alpha)`` then component."""
        alpha, i = col
        return (self.L(alpha), i)

    def is_injective(self, domain: Iterable[Sequence[int]]) -> bool:
        seen: dict[Fraction, tuple] = {}
        for a in domain:
            a = tuple(a)
            v = self.L(a)
            if v in seen and seen[v] != a:
                return False
            seen[v] = a
        return True


def draw_order_weights(domain: Iterable[Sequence[int]], seed: int = 0, max_tries: int = 200,
                       nvars: int | None = None) -> OrderWeights:
    """Random positive rationals, redrawn until ``L`` separates ``domain``."""
    domain = [tuple(a) for a in domain]
    k = nvars if nvars is not None else (len(domain[0]) if domain else 1)
    if k == 1:
        return OrderWeights((Fraction(1),))
    rng = random.Random(seed)
    for _ in range(max_tries):
        lam = (Fraction(1),) + tuple(Fraction(rng.randint(1, 997), rng.randint(1, 997)) for _ in range(k - 1))
        w = OrderWeights(lam)
        if w.is_injective(domain):
            return w
    raise OrderError(f"no injective order found in {max_tries} draws")


# ---------------------------------------------------------------------------
# module rows


def vec_columns(v: Sequence[Poly]) -> dict:
    """Coefficient vector keyed by ``(monomial, component)``."""
    return {(m, i): c for i, p in enumerate(v) for m, c in p.terms.items()}


def columns_to_vec(cols: dict, m: int, nvars: int) -> Vec:
    comps: list[dict] = [{} for _ in range(m)]
    for (mono, i), c in cols.items():
        comps[i][mono] = c
    return tuple(Poly(nvars, d) for d in comps)


def _mul_vec(mono: MultiIndex, v: Sequence[Poly], keep) -> dict:
    out = {}
    for i, p in enumerate(v):
        for m, c in p.terms.items():
            mm = tuple(a + b for a, b in zip(mono, m))
            if keep is None or keep(mm):
                out[(mm, i)] = c
    return out


@dataclass
class ModuleSpan:
    """Echelon form of the truncated module spanned by monomial multiples."""

    ech: Echelon
    rows: dict  # (k, mono) -> column vector
    nvars: int
    m: int

    def reduce(self, v: Sequence[Poly]):
        return self.ech.reduce(vec_columns(v))

    def coefficients(self, combo: dict, q: int) -> list[Poly]:
        coeffs: list[dict] = [{} for _ in range(q)]
        for (k, mono), c in combo.items():
            coeffs[k][mono] = coeffs[k].get(mono, 0) + c
        return [Poly(self.nvars, d) for d in coeffs]


def build_module(gens: Sequence[Sequence[Poly]], multipliers: Sequence[MultiIndex] | Callable,
                 keep=None, order: Callable | None = None, start: int = 0,
                 span: ModuleSpan | None = None) -> ModuleSpan:
    """Row-reduce ``mu * g_k`` for every multiplier ``mu`` (filtered by ``keep``).

    ``multipliers`` may be a callable ``k -> list of monomials`` so that each
    generator gets its own multiplier set.
    """
    if span is None:
        nvars = gens[0][0].nvars if gens else 0
        m = len(gens[0]) if gens else 0
        span = ModuleSpan(Echelon(order), {}, nvars, m)
    for k, g in enumerate(gens, start=start):
        mus = multipliers(k) if callable(multipliers) else multipliers
        for mu in mus:
            row = _mul_vec(mu, g, keep)
            if row:
                span.rows[(k, mu)] = row
                span.ech.insert(row, (k, mu))
    return span


def solve_module(target: Sequence[Poly], gens: Sequence[Sequence[Poly]], cap: int | None) -> list[Poly] | None:
    """Polynomial coefficients with ``target = sum c_k g_k``, or None.

    With ``cap`` the identity is required modulo x-degree ``> cap`` (a
    truncated local-ring solve where units are allowed); without it the
    identity must hold exactly with ``deg c_k <= deg target``.
    """
    nvars = target[0].nvars
    if not any(target):
        return [Poly.zero(nvars) for _ in gens]
    if not gens:
        return None
    if cap is not None:
        if cap < 0:
            return [Poly.zero(nvars) for _ in gens]
        keep = lambda mm: sum(mm) <= cap
        target = tuple(p.filter(keep) for p in target)
        if not any(target):
            return [Poly.zero(nvars) for _ in gens]
        mus = monomials_upto(nvars, cap)
    else:
        keep = None
        mus = monomials_upto(nvars, max(p.degree() for p in target))
    span = build_module(gens, mus, keep, order=_graded_key)
    red = span.reduce(target)
    if red.remainder:
        return None
    return span.coefficients(red.combo, len(gens))


def _graded_key(col):
    mono, i = col
    return (sum(mono), mono, i)


# ---------------------------------------------------------------------------
# Galligo division


@dataclass
class DivisionResult:
    remainder: Vec
    coefficients: list[Poly]
    E_L: frozenset  # pivot columns (monomial, component)
    order: OrderWeights

    def reconstruct(self, generators: Sequence[Sequence[Poly]], keep=None) -> Vec:
        """``sum c_k g_k + r`` reduced by ``keep``."""
        out = list(self.remainder)
        for c, g in zip(self.coefficients, generators):
            for i, p in enumerate(g):
                out[i] = out[i] + c.mul(p, keep)
        return tuple(out)


def _as_vec(f) -> tuple[Vec, Callable | None]:
    if isinstance(f, JetSeries):
        return f.comps, f.trunc.keep
    if isinstance(f, Poly):
        return (f,), None
    return tuple(f), None


def galligo_divide(f, generators: Sequence, order: OrderWeights | None = None,
                   policy: TruncationPolicy | None = None, keep=None,
                   max_degree: int | None = None) -> DivisionResult:
    """Remainder of ``f`` modulo the truncated module, supported off ``E_L(M)``.

    Inputs are ``JetSeries`` (their jet ideal is the truncation), or tuples of
    ``Poly`` together with either ``keep`` or ``max_degree`` (total degree cut).
    """
    fv, fkeep = _as_vec(f)
    gens = [_as_vec(g)[0] for g in generators]
    keep = keep or fkeep
    if keep is None:
        if max_degree is None:
            degs = [p.degree() for p in fv] + [p.degree() for g in gens for p in g]
            max_degree = max([0] + degs)
        md = max_degree
        keep = lambda mm: sum(mm) <= md
    nvars = fv[0].nvars
    m = len(fv)
    if any(len(g) != m for g in gens):
        raise ValueError("generators must have the same number of components as f")
    # all monomials admitted by the truncation (it is an order ideal, so a
    # graded walk stops at the first degree with no admitted monomial)
    universe = _admitted_monomials(nvars, keep)
    if order is None:
        order = draw_order_weights(universe, nvars=nvars)
    if not order.is_injective(universe):
        raise OrderError("order weights tie on admitted exponents; draw new weights")
    fv = tuple(p.filter(keep) for p in fv)
    span = build_module(gens, universe, keep, order=order.key)
    red = span.reduce(fv)
    r = columns_to_vec(red.remainder, m, nvars)
    coeffs = span.coefficients(red.combo, len(gens))
    return DivisionResult(r, coeffs, frozenset(span.ech.pivots), order)


def _admitted_monomials(nvars: int, keep) -> list[MultiIndex]:
    out = []
    d = 0
    while True:
        layer = [mm for mm in _monomials_exact(nvars, d) if keep(mm)]
        if not layer:
            break
        out.extend(layer)
        d += 1
        if d > 64:
            raise ValueError("truncation does not bound the degree")
    return out


def newton_data(f: Sequence[Poly], order: OrderWeights) -> tuple[set, tuple | None]:
    """Newton diagram ``Q(f)`` and its least element ``exp_L(f)``."""
    Q = {(m, i) for i, p in enumerate(f) for m in p.terms}
    return Q, (min(Q, key=order.key) if Q else None)


# ---------------------------------------------------------------------------
# Taylor preparation


@dataclass
class Preparation:
    """``f = sum_k c_k(t, x) t^{alpha_k} f_{alpha_k}(x)`` at truncation."""

    alphas: list[MultiIndex]
    coeffs: list[JetSeries]  # scalar series c_{alpha_k}
    fields: list[Vec]  # f_{alpha_k}(x), polynomials in x only
    source: JetSeries
    order: OrderWeights
    certificates: dict = field(default_factory=dict)  # alpha -> coefficient polys
    saturated: bool = False

    def reconstruct(self) -> JetSeries:
        f = self.source
        out = JetSeries.zeros(f.nt, f.nx, f.policy, f.arity)
        for a, c, v in zip(self.alphas, self.coeffs, self.fields):
            out = out + c * _t_times(f, a, v)
        return out

    def normalization_matrix(self) -> list[list[Poly]]:
        """Entry ``[j][k]`` is the t^{alpha_j} coefficient of ``t^{alpha_k} c_k``."""
        return normalization_matrix(self.alphas, self.coeffs)


def normalization_matrix(alphas: Sequence[MultiIndex], coeffs: Sequence[JetSeries]) -> list[list[Poly]]:
    out = []
    for aj in alphas:
        row = []
        for ak, c in zip(alphas, coeffs):
            if all(x >= y for x, y in zip(aj, ak)):
                diff = tuple(x - y for x, y in zip(aj, ak))
                row.append(c.coefficient(diff)[0])
            else:
                row.append(Poly.zero(c.nx))
        out.append(row)
    return out


def _t_times(f: JetSeries, alpha: MultiIndex, v: Sequence[Poly]) -> JetSeries:
    """``t^alpha v(x)`` as a series with the layout of ``f``."""
    return JetSeries.from_terms(f.nt, f.nx, f.policy, {tuple(alpha): tuple(v)}, f.arity)


def taylor_prepare(f: JetSeries, order: OrderWeights | None = None, seed: int = 0,
                   normalize: bool = True) -> Preparation:
    """Greedy preparation of ``f`` followed by the Kronecker renormalization."""
    nt, nx = f.nt, f.nx
    terms = f.terms()
    alphas_all = [a for a in terms if any(a)]
    const = terms.get((0,) * nt)
    if const is not None and any(const):
        # t^0 f_0 is its own generator; keep it first
        alphas_all = [(0,) * nt] + alphas_all
    if order is None:
        order = draw_order_weights(multi_indices(nt, f.policy.L_t, 0), seed=seed, nvars=nt)
    if not order.is_injective(multi_indices(nt, f.policy.L_t, 0)):
        raise OrderError("order weights tie on t-exponents; draw new weights")
    alphas_all.sort(key=order.L)
    keep = f.trunc.keep
    nv = nt + nx
    mult_cache: dict[MultiIndex, list] = {}

    def multipliers(alpha):
        if alpha not in mult_cache:
            mult_cache[alpha] = [mm for mm in _admitted_monomials(nv, keep)
                                 if keep(tuple(a + b for a, b in zip(alpha + (0,) * nx, mm)))]
        return mult_cache[alpha]

    span: ModuleSpan | None = None
    selected: list[MultiIndex] = []
    gens: list[Vec] = []
    certs: dict[MultiIndex, list[Poly]] = {}
    for a in alphas_all:
        g = _t_times(f, a, terms[a]).comps
        if span is not None:
            red = span.reduce(g)
            if not red.remainder:
                certs[a] = span.coefficients(red.combo, len(gens))
                continue
        k = len(gens)
        selected.append(a)
        gens.append(g)
        span = build_module([g], lambda _k, a=a: multipliers(a), keep, order=_graded_key,
                            start=k, span=span)
    pol = f.policy
    coeffs = []
    for k, a in enumerate(selected):
        c = Poly.const(nv, 1)
        for b, cs in certs.items():
            if k < len(cs):
                c = c + cs[k]
        coeffs.append(JetSeries(nt, nx, pol, (c,)))
    prep = Preparation(selected, coeffs, [terms[a] for a in selected], f, order, certs, f.saturated)
    if normalize:
        prep.coeffs = renormalize(selected, coeffs)
    return prep


def renormalize(alphas: Sequence[MultiIndex], coeffs: Sequence[JetSeries]) -> list[JetSeries]:
    """``c_k <- c_k - sum_{alpha_j >= alpha_k} t^{alpha_j - alpha_k} [c_k]_{alpha_j - alpha_k}(x) + 1``."""
    out = []
    for ak, c in zip(alphas, coeffs):
        p = c.comps[0]
        nt = c.nt
        for aj in alphas:
            if all(x >= y for x, y in zip(aj, ak)):
                diff = tuple(x - y for x, y in zip(aj, ak))
                p = p.filter(lambda mm, diff=diff: tuple(mm[:nt]) != diff)
        p = p + Poly.const(p.nvars, 1)
        out.append(JetSeries(c.nt, c.nx, c.policy, (p,), c.saturated))
    return out


def check_normalization(prep_or_alphas, coeffs=None) -> bool:
    if coeffs is None:
        alphas, coeffs = prep_or_alphas.alphas, prep_or_alphas.coeffs
    else:
        alphas = prep_or_alphas
    M = normalization_matrix(alphas, coeffs)
    for j, row in enumerate(M):
        for k, p in enumerate(row):
            want = Poly.const(p.nvars, 1 if j == k else 0)
            if p != want:
                return False
    return True


# ---------------------------------------------------------------------------
# finite generation


@dataclass
class GenerationResult:
    F: list  # chosen (field, degree) pairs
    certificates: list  # per input element: {index in F: coefficient Poly}
    elements: list
    cap_budget: int | None
    failures: list = field(default_factory=list)  # elements with no representation

    def replay(self, idx: int) -> bool:
        g, e = self.elements[idx]
        cert = self.certificates[idx]
        if cert is None:
            return False
        cap = None if self.cap_budget is None else self.cap_budget - sum(e)
        nvars = g[0].nvars
        out = [Poly.zero(nvars) for _ in g]
        for j, c in cert.items():
            f, d = self.F[j]
            if not all(x <= y for x, y in zip(d, e)):
                return False
            for i, p in enumerate(f):
                out[i] = out[i] + c.mul(p)
        if cap is not None:
            out = [p.filter(lambda mm: sum(mm) <= cap) for p in out]
            g = tuple(p.filter(lambda mm: sum(mm) <= cap) for p in g)
        return tuple(out) == tuple(g)


def _pair(s):
    if hasattr(s, "X") and hasattr(s, "d"):
        return tuple(s.X), tuple(s.d)
    g, d = s
    if isinstance(g, Poly):
        g = (g,)
    return tuple(g), tuple(d)


def finite_generate(S: Iterable, budget: int | None = None) -> GenerationResult:
    """Greedy finite subset ``F`` with ``g = sum_{d <= e} c f`` for every ``(g, e)``.

    Elements are visited by increasing ``|e|_1``; one without a representation
    over the current ``F`` joins ``F``.  A final pass records certificates.
    """
    elems = [_pair(s) for s in S]
    order = sorted(range(len(elems)), key=lambda i: (sum(elems[i][1]), elems[i][1], i))
    F: list = []

    def try_solve(g, e):
        cap = None if budget is None else budget - sum(e)
        idx = [j for j, (_, d) in enumerate(F) if all(x <= y for x, y in zip(d, e))]
        sol = solve_module(g, [F[j][0] for j in idx], cap)
        if sol is None:
            return None
        return {j: c for j, c in zip(idx, sol) if c}

    for i in order:
        g, e = elems[i]
        if not any(g):
            continue
        if try_solve(g, e) is None:
            F.append((g, e))
    certs = []
    failures = []
    for i, (g, e) in enumerate(elems):
        c = try_solve(g, e)
        if c is None:
            failures.append(i)
        certs.append(c)
    return GenerationResult(F, certs, elems, budget, failures)
