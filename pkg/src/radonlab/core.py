"""Exact truncated series arithmetic and dilation bookkeeping.

Everything symbolic in the package is built on two objects:

``Poly``
    a sparse multivariate polynomial with :class:`fractions.Fraction`
    coefficients, keyed by exponent tuples.

``JetSeries``
    a (vector of) polynomial(s) in ``(t_1..t_N, x_1..x_n)`` reduced modulo
    the jet ideal of a :class:`TruncationPolicy`.

The jet ideal keeps a monomial ``t^a x^b`` iff ``|a| <= L_t`` and
``|a| + |b| <= L_t + L_x``.  This is the weighted truncation in which ``t``
and ``x`` both carry weight one; unlike a plain box cut it is preserved by
substitution of near-identity maps ``x -> x + O(t)``, by the Euler operator
in ``t``, by Lie series and by brackets of fields that vanish at ``t = 0``.
All round trips below are therefore exact modulo the ideal.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from math import factorial
from typing import Callable, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

MultiIndex = tuple[int, ...]
Rational = Fraction | int


class DimensionError(ValueError):
    """Raised when multi-indices, fields or series have incompatible sizes."""


class PreconditionError(ValueError):
    """Raised when an operation's input violates its precondition."""


def _frac(c) -> Fraction:
    return c if isinstance(c, Fraction) else Fraction(c)


def mono_add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(i + j for i, j in zip(a, b))


def mono_leq(a: Sequence[int], b: Sequence[int]) -> bool:
    return all(i <= j for i, j in zip(a, b))


def multi_factorial(a: Iterable[int]) -> int:
    out = 1
    for i in a:
        out *= factorial(i)
    return out


def monomials_upto(nvars: int, degree: int) -> list[MultiIndex]:
    """All exponent tuples of total degree <= ``degree``, graded then lex."""
    out: list[MultiIndex] = []
    for d in range(degree + 1):
        out.extend(_monomials_exact(nvars, d))
    return out


def _monomials_exact(nvars: int, d: int) -> list[MultiIndex]:
    if nvars == 0:
        return [()] if d == 0 else []
    if nvars == 1:
        return [(d,)]
    out = []
    for first in range(d, -1, -1):
        for rest in _monomials_exact(nvars - 1, d - first):
            out.append((first,) + rest)
    return out


# ---------------------------------------------------------------------------
# dilations and degrees


@dataclass(frozen=True)
class DilationSpec:
    """Multi-parameter dilations ``delta t = (delta^{e_1} t_1, ..., delta^{e_N} t_N)``."""

    e: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        e = tuple(tuple(int(c) for c in v) for v in self.e)
        object.__setattr__(self, "e", e)
        if len(e) < 1:
            raise DimensionError("need at least one t-variable")
        nu = len(e[0])
        if nu < 1:
            raise DimensionError("need at least one parameter")
        for v in e:
            if len(v) != nu:
                raise DimensionError("all dilation exponents must have length nu")
            if any(c < 0 for c in v) or not any(v):
                raise ValueError(f"dilation exponent {v} must be a nonzero vector in N^nu")

    @classmethod
    def single(cls, N: int) -> "DilationSpec":
        """The one-parameter isotropic structure ``e_j = (1)``."""
        return cls(tuple((1,) for _ in range(N)))

    @classmethod
    def coordinate(cls, N: int) -> "DilationSpec":
        """``nu = N`` with ``e_j`` the j-th unit vector."""
        return cls(tuple(tuple(int(i == j) for i in range(N)) for j in range(N)))

    @property
    def N(self) -> int:
        return len(self.e)

    @property
    def nu(self) -> int:
        return len(self.e[0])

    def deg(self, alpha: Sequence[int]) -> tuple[int, ...]:
        return deg(alpha, self)

    def groups(self) -> list[list[int]]:
        """For each parameter mu, the t-coordinates with ``e_j^mu != 0``."""
        return [[j for j in range(self.N) if self.e[j][mu]] for mu in range(self.nu)]

    def scale_factors(self, delta: Sequence) -> list:
        """``delta^{e_j}`` for each coordinate (exact if ``delta`` is exact)."""
        out = []
        for v in self.e:
            f = 1
            for d, k in zip(delta, v):
                if k:
                    f = f * d**k
            out.append(f)
        return out

    def dilate(self, delta: Sequence, t: Sequence) -> list:
        return [f * ti for f, ti in zip(self.scale_factors(delta), t)]

    def concat(self, other: "DilationSpec") -> "DilationSpec":
        """Dilations on ``R^{N1+N2}`` with ``nu1 + nu2`` parameters acting blockwise."""
        z1, z2 = (0,) * other.nu, (0,) * self.nu
        return DilationSpec(tuple(v + z1 for v in self.e) + tuple(z2 + v for v in other.e))


def deg(alpha: Sequence[int], e: DilationSpec) -> tuple[int, ...]:
    """``deg(alpha) = sum_j alpha_j e_j``."""
    if len(alpha) != e.N:
        raise DimensionError(f"multi-index of length {len(alpha)} but N = {e.N}")
    if any(a < 0 for a in alpha):
        raise ValueError("multi-index entries must be nonnegative")
    out = [0] * e.nu
    for a, v in zip(alpha, e.e):
        if a:
            for mu, c in enumerate(v):
                out[mu] += a * c
    return tuple(out)


class PowerClass(NamedTuple):
    kind: str  # "pure" | "nonpure" | "zero"
    mu: int | None = None

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"


def classify_power(alpha: Sequence[int], e: DilationSpec) -> PowerClass:
    """Pure iff ``deg(alpha)`` is nonzero in exactly one component (``mu`` is 0-based)."""
    d = deg(alpha, e)
    support = [mu for mu, c in enumerate(d) if c]
    if not support:
        return PowerClass("zero")
    if len(support) == 1:
        return PowerClass("pure", support[0])
    return PowerClass("nonpure")


# ---------------------------------------------------------------------------
# truncation


@dataclass(frozen=True)
class TruncationPolicy:
    L_t: int = 3
    L_x: int = 3
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.L_t < 1:
            raise ValueError("L_t must be >= 1")
        if self.L_x < 0:
            raise ValueError("L_x must be >= 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")

    @property
    def budget(self) -> int:
        return self.L_t + self.L_x

    def keeps(self, nt: int, mono: MultiIndex) -> bool:
        a = sum(mono[:nt])
        return a <= self.L_t and a + sum(mono[nt:]) <= self.budget


class _Trunc(NamedTuple):
    nt: int
    t_order: int
    budget: int

    def keep(self, mono: MultiIndex) -> bool:
        a = sum(mono[: self.nt])
        return a <= self.t_order and a + sum(mono[self.nt :]) <= self.budget


# ---------------------------------------------------------------------------
# polynomials


class Poly:
    """Sparse polynomial with exact rational coefficients.

    Treated as immutable: every operation returns a new object.  ``keep`` is an
    optional predicate on exponent tuples used to discard monomials during
    multiplication (it must describe a monomial ideal complement).
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[MultiIndex, Rational] | None = None):
        self.nvars = nvars
        clean: dict[MultiIndex, Fraction] = {}
        if terms:
            for m, c in terms.items():
                if len(m) != nvars:
                    raise DimensionError(f"exponent {m} does not have {nvars} entries")
                if c:
                    clean[tuple(m)] = _frac(c)
        self.terms = clean

    # construction -----------------------------------------------------------
    @classmethod
    def _raw(cls, nvars: int, terms: dict) -> "Poly":
        p = cls.__new__(cls)
        p.nvars = nvars
        p.terms = terms
        return p

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls._raw(nvars, {})

    @classmethod
    def const(cls, nvars: int, c: Rational) -> "Poly":
        return cls._raw(nvars, {(0,) * nvars: _frac(c)} if c else {})

    @classmethod
    def var(cls, nvars: int, i: int, power: int = 1) -> "Poly":
        m = [0] * nvars
        m[i] = power
        return cls._raw(nvars, {tuple(m): Fraction(1)})

    @classmethod
    def monomial(cls, mono: MultiIndex, c: Rational = 1) -> "Poly":
        return cls._raw(len(mono), {tuple(mono): _frac(c)} if c else {})

    # basic protocol ----------------------------------------------------------
    def __bool__(self) -> bool:
        return bool(self.terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.nvars, other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self) -> int:
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        return f"Poly({self.to_str()})"

    def to_str(self, names: Sequence[str] | None = None) -> str:
        if not self.terms:
            return "0"
        names = names or [f"v{i + 1}" for i in range(self.nvars)]
        parts = []
        for m in sorted(self.terms, key=lambda m: (sum(m), tuple(-i for i in m))):
            c = self.terms[m]
            factors = []
            for name, k in zip(names, m):
                if k == 1:
                    factors.append(name)
                elif k > 1:
                    factors.append(f"{name}^{k}")
            mon = "*".join(factors)
            if not mon:
                s = _fmt_frac(abs(c))
            elif abs(c) == 1:
                s = mon
            else:
                s = f"{_fmt_frac(abs(c))}*{mon}"
            sign = "-" if c < 0 else "+"
            parts.append((sign, s))
        first_sign, first = parts[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, s in parts[1:]:
            out += f" {sign} {s}"
        return out

    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=-1)

    def partial_degree(self, idx: Iterable[int]) -> int:
        idx = list(idx)
        return max((sum(m[i] for i in idx) for m in self.terms), default=-1)

    def coeff(self, mono: MultiIndex) -> Fraction:
        return self.terms.get(tuple(mono), Fraction(0))

    def constant(self) -> Fraction:
        return self.terms.get((0,) * self.nvars, Fraction(0))

    # arithmetic --------------------------------------------------------------
    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise DimensionError("polynomials live in different rings")
            return other
        return Poly.const(self.nvars, other)

    def __add__(self, other) -> "Poly":
        other = self._coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m, 0) + c
            if v:
                out[m] = v
            else:
                out.pop(m, None)
        return Poly._raw(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly._raw(self.nvars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Poly":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Poly":
        return self._coerce(other) - self

    def scale(self, c: Rational) -> "Poly":
        c = _frac(c)
        if not c:
            return Poly.zero(self.nvars)
        return Poly._raw(self.nvars, {m: v * c for m, v in self.terms.items()})

    def mul(self, other: "Poly", keep: Callable[[MultiIndex], bool] | None = None) -> "Poly":
        other = self._coerce(other)
        out: dict[MultiIndex, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(i + j for i, j in zip(m1, m2))
                if keep is not None and not keep(m):
                    continue
                v = out.get(m, 0) + c1 * c2
                if v:
                    out[m] = v
                else:
                    out.pop(m, None)
        return Poly._raw(self.nvars, out)

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, Fraction)):
            return self.scale(other)
        return self.mul(other)

    __rmul__ = __mul__

    def pow(self, k: int, keep=None) -> "Poly":
        out = Poly.const(self.nvars, 1)
        for _ in range(k):
            out = out.mul(self, keep)
        return out

    def filter(self, keep: Callable[[MultiIndex], bool]) -> "Poly":
        return Poly._raw(self.nvars, {m: c for m, c in self.terms.items() if keep(m)})

    def map_terms(self, fn: Callable[[MultiIndex, Fraction], Fraction]) -> "Poly":
        out = {}
        for m, c in self.terms.items():
            v = fn(m, c)
            if v:
                out[m] = _frac(v)
        return Poly._raw(self.nvars, out)

    def diff(self, i: int, k: int = 1) -> "Poly":
        out = {}
        for m, c in self.terms.items():
            if m[i] >= k:
                f = 1
                for s in range(k):
                    f *= m[i] - s
                mm = list(m)
                mm[i] -= k
                out[tuple(mm)] = c * f
        return Poly._raw(self.nvars, out)

    # variable manipulation ---------------------------------------------------
    def embed(self, nvars: int, positions: Sequence[int]) -> "Poly":
        """Rename variable ``i`` to ``positions[i]`` in a ring with ``nvars`` variables."""
        out = {}
        for m, c in self.terms.items():
            mm = [0] * nvars
            for i, k in zip(positions, m):
                mm[i] += k
            mm = tuple(mm)
            out[mm] = out.get(mm, 0) + c
        return Poly._raw(nvars, {m: c for m, c in out.items() if c})

    def restrict(self, idx: Sequence[int]) -> "Poly":
        """Keep only the variables in ``idx``; requires the others to be absent."""
        idx = list(idx)
        rest = [i for i in range(self.nvars) if i not in idx]
        out = {}
        for m, c in self.terms.items():
            if any(m[i] for i in rest):
                raise DimensionError("polynomial depends on variables being dropped")
            out[tuple(m[i] for i in idx)] = c
        return Poly._raw(len(idx), out)

    def split(self, idx: Sequence[int]) -> dict[MultiIndex, "Poly"]:
        """Group by the exponents of variables ``idx``; values are in the remaining ones."""
        idx = list(idx)
        rest = [i for i in range(self.nvars) if i not in idx]
        out: dict[MultiIndex, dict] = {}
        for m, c in self.terms.items():
            key = tuple(m[i] for i in idx)
            out.setdefault(key, {})[tuple(m[i] for i in rest)] = c
        return {k: Poly._raw(len(rest), v) for k, v in out.items()}

    def substitute(self, values: Sequence["Poly"], keep=None) -> "Poly":
        """Replace variable ``i`` by ``values[i]`` (all in a common ring)."""
        if len(values) != self.nvars:
            raise DimensionError("need one substitution per variable")
        if not self.terms:
            return Poly.zero(values[0].nvars if values else 0)
        target = values[0].nvars
        cache: dict[tuple[int, int], Poly] = {}

        def power(i: int, k: int) -> Poly:
            if k == 0:
                return Poly.const(target, 1)
            key = (i, k)
            if key not in cache:
                cache[key] = power(i, k - 1).mul(values[i], keep)
            return cache[key]

        out = Poly.zero(target)
        for m, c in self.terms.items():
            term = Poly.const(target, c)
            for i, k in enumerate(m):
                if k:
                    term = term.mul(power(i, k), keep)
                    if not term:
                        break
            out = out + term
        return out

    def scale_vars(self, factors: Sequence) -> "Poly":
        """``p(f_1 v_1, ..., f_k v_k)`` for exact scalar factors (0 allowed)."""
        def fn(m, c):
            for f, k in zip(factors, m):
                if k:
                    c = c * _frac(f) ** k
            return c

        return self.map_terms(fn)

    # evaluation --------------------------------------------------------------
    def eval_exact(self, point: Sequence[Rational]) -> Fraction:
        total = Fraction(0)
        for m, c in self.terms.items():
            v = c
            for x, k in zip(point, m):
                if k:
                    v *= _frac(x) ** k
            total += v
        return total

    def eval_numeric(self, point: Sequence) -> np.ndarray | float:
        """Vectorized float evaluation; ``point`` entries broadcast together."""
        pts = [np.asarray(p, dtype=float) for p in point]
        shape = np.broadcast(*pts).shape if pts else ()
        total = np.zeros(shape)
        maxpow = [0] * self.nvars
        for m in self.terms:
            for i, k in enumerate(m):
                maxpow[i] = max(maxpow[i], k)
        powers = []
        for i in range(self.nvars):
            pw = [np.ones(shape)]
            for _ in range(maxpow[i]):
                pw.append(pw[-1] * pts[i])
            powers.append(pw)
        for m, c in self.terms.items():
            v = float(c)
            term = np.full(shape, v)
            for i, k in enumerate(m):
                if k:
                    term = term * powers[i][k]
            total = total + term
        return total


def _fmt_frac(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


# ---------------------------------------------------------------------------
# jet series


@dataclass(frozen=True)
class JetSeries:
    """A vector of polynomials in ``(t, x)`` reduced modulo the policy's jet ideal.

    ``comps`` holds one :class:`Poly` per output coordinate, each in
    ``nt + nx`` variables (``t`` first).  ``saturated`` records that some
    operation producing this value discarded nonzero terms.
    """

    nt: int
    nx: int
    policy: TruncationPolicy
    comps: tuple[Poly, ...]
    saturated: bool = False

    def __post_init__(self):
        nv = self.nt + self.nx
        comps = tuple(self.comps)
        for p in comps:
            if p.nvars != nv:
                raise DimensionError(f"component has {p.nvars} variables, expected {nv}")
        tr = self.trunc
        sat = self.saturated
        clean = []
        for p in comps:
            q = p.filter(tr.keep)
            if len(q.terms) != len(p.terms):
                sat = sat or _drops_below_t_order(p, tr)
            clean.append(q)
        object.__setattr__(self, "comps", tuple(clean))
        object.__setattr__(self, "saturated", sat)

    @property
    def trunc(self) -> _Trunc:
        return _Trunc(self.nt, self.policy.L_t, self.policy.budget)

    @property
    def arity(self) -> int:
        return len(self.comps)

    @property
    def nvars(self) -> int:
        return self.nt + self.nx

    # construction --------------------------------------------------------
    @classmethod
    def from_polys(cls, nt: int, nx: int, policy: TruncationPolicy, comps: Iterable[Poly], saturated=False):
        return cls(nt, nx, policy, tuple(comps), saturated)

    @classmethod
    def identity(cls, nt: int, nx: int, policy: TruncationPolicy) -> "JetSeries":
        return cls(nt, nx, policy, tuple(Poly.var(nt + nx, nt + i) for i in range(nx)))

    @classmethod
    def zeros(cls, nt: int, nx: int, policy: TruncationPolicy, arity: int) -> "JetSeries":
        return cls(nt, nx, policy, tuple(Poly.zero(nt + nx) for _ in range(arity)))

    @classmethod
    def from_terms(cls, nt: int, nx: int, policy: TruncationPolicy,
                   terms: Mapping[MultiIndex, Sequence[Poly]], arity: int) -> "JetSeries":
        """Inverse of :meth:`terms`: ``{alpha: (x-poly per component)}``."""
        comps = [Poly.zero(nt + nx) for _ in range(arity)]
        xpos = list(range(nt, nt + nx))
        for alpha, vec in terms.items():
            tmono = Poly.monomial(tuple(alpha) + (0,) * nx)
            for i, p in enumerate(vec):
                comps[i] = comps[i] + tmono.mul(p.embed(nt + nx, xpos))
        return cls(nt, nx, policy, tuple(comps))

    def with_policy(self, policy: TruncationPolicy) -> "JetSeries":
        return JetSeries(self.nt, self.nx, policy, self.comps, self.saturated)

    # views -----------------------------------------------------------------
    def terms(self) -> dict[MultiIndex, tuple[Poly, ...]]:
        """``{alpha: (coefficient x-polynomial per component)}`` for nonzero alpha slices."""
        tidx = list(range(self.nt))
        out: dict[MultiIndex, list[Poly]] = {}
        for i, p in enumerate(self.comps):
            for alpha, q in p.split(tidx).items():
                out.setdefault(alpha, [Poly.zero(self.nx) for _ in self.comps])[i] = q
        return {a: tuple(v) for a, v in sorted(out.items(), key=lambda kv: (sum(kv[0]), kv[0]))}

    def coefficient(self, alpha: MultiIndex) -> tuple[Poly, ...]:
        return self.terms().get(tuple(alpha), tuple(Poly.zero(self.nx) for _ in self.comps))

    def t_part(self, k: int) -> "JetSeries":
        """Component homogeneous of total t-degree ``k``."""
        return self.map(lambda p: p.filter(lambda m: sum(m[: self.nt]) == k))

    def is_zero(self) -> bool:
        return not any(self.comps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, JetSeries):
            return NotImplemented
        return (self.nt, self.nx, self.comps) == (other.nt, other.nx, other.comps)

    def __hash__(self):
        return hash((self.nt, self.nx, self.comps))

    # arithmetic --------------------------------------------------------------
    def _check(self, other: "JetSeries"):
        if (self.nt, self.nx, self.arity) != (other.nt, other.nx, other.arity):
            raise DimensionError("series have different shapes")

    def map(self, fn: Callable[[Poly], Poly]) -> "JetSeries":
        return JetSeries(self.nt, self.nx, self.policy, tuple(fn(p) for p in self.comps), self.saturated)

    def __add__(self, other: "JetSeries") -> "JetSeries":
        self._check(other)
        return JetSeries(self.nt, self.nx, self.policy,
                         tuple(a + b for a, b in zip(self.comps, other.comps)),
                         self.saturated or other.saturated)

    def __sub__(self, other: "JetSeries") -> "JetSeries":
        return self + (-other)

    def __neg__(self) -> "JetSeries":
        return self.map(lambda p: -p)

    def scale(self, c: Rational) -> "JetSeries":
        return self.map(lambda p: p.scale(c))

    def mul_scalar_series(self, s: "JetSeries") -> "JetSeries":
        """Multiply every component by the scalar series ``s`` (arity 1)."""
        if s.arity != 1 or (s.nt, s.nx) != (self.nt, self.nx):
            raise DimensionError("need a scalar series in the same variables")
        keep = self.trunc.keep
        return JetSeries(self.nt, self.nx, self.policy,
                         tuple(p.mul(s.comps[0], keep) for p in self.comps),
                         self.saturated or s.saturated)

    def __mul__(self, other):
        if isinstance(other, JetSeries):
            if self.arity == 1 and other.arity != 1:
                return other.mul_scalar_series(self)
            if other.arity == 1:
                return self.mul_scalar_series(other)
            raise DimensionError("componentwise product of two vector series is not defined")
        return self.scale(other)

    __rmul__ = __mul__

    def euler_t(self) -> "JetSeries":
        """``d/d eps |_{eps=1} f(eps t, x)``: multiply each term by its t-degree."""
        nt = self.nt
        return self.map(lambda p: p.map_terms(lambda m, c: c * sum(m[:nt])))

    def scale_t(self, factors: Sequence) -> "JetSeries":
        """``f(f_1 t_1, ..., f_N t_N, x)``."""
        full = list(factors) + [1] * self.nx
        return self.map(lambda p: p.scale_vars(full))

    def eval_numeric(self, t: Sequence, x: Sequence) -> list[np.ndarray]:
        pts = list(t) + list(x)
        return [p.eval_numeric(pts) for p in self.comps]


def _drops_below_t_order(p: Poly, tr: _Trunc) -> bool:
    """Whether a dropped monomial had t-degree within the order (an x-budget casualty)."""
    for m in p.terms:
        a = sum(m[: tr.nt])
        if a <= tr.t_order and a + sum(m[tr.nt:]) > tr.budget:
            return True
    return False


# ---------------------------------------------------------------------------
# series arithmetic, composition and inversion


def series_arith(a: JetSeries, b: JetSeries | Rational, op: str) -> JetSeries:
    """``op`` in {"add", "sub", "mul", "scale"}; exact and re-truncated."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scale":
        return a.scale(b)
    raise ValueError(f"unknown op {op!r}")


def compose(f: JetSeries, g: JetSeries) -> JetSeries:
    """``f(t, g(t, x))``: substitute the map ``g`` (arity nx) for the x-variables of ``f``."""
    if g.arity != f.nx or (g.nt, g.nx) != (f.nt, f.nx):
        raise DimensionError("inner map must be an R^n-valued series in the same variables")
    nv = f.nvars
    tr = f.trunc
    values = [Poly.var(nv, i) for i in range(f.nt)] + list(g.comps)
    comps = tuple(p.substitute(values, tr.keep) for p in f.comps)
    return JetSeries(f.nt, f.nx, f.policy, comps, f.saturated or g.saturated)


def check_identity_at_zero(gamma: JetSeries) -> None:
    nt, nx = gamma.nt, gamma.nx
    if gamma.arity != nx:
        raise PreconditionError("a surface must be an R^n-valued map of x in R^n")
    for i, p in enumerate(gamma.comps):
        zero_part = p.filter(lambda m: sum(m[:nt]) == 0)
        if zero_part != Poly.var(nt + nx, nt + i):
            raise PreconditionError("gamma_0 must be the identity map")


def invert(gamma: JetSeries) -> JetSeries:
    """The t-filtration inverse: ``gamma_t(gamma_t^{-1}(x)) = x`` modulo the jet ideal.

    Writes ``gamma = x + h`` and iterates ``k <- -h(t, x + k)``; each pass fixes
    one more t-degree.
    """
    check_identity_at_zero(gamma)
    ident = JetSeries.identity(gamma.nt, gamma.nx, gamma.policy)
    h = gamma - ident
    k = JetSeries.zeros(gamma.nt, gamma.nx, gamma.policy, gamma.nx)
    for _ in range(gamma.policy.L_t):
        k = -compose(h, ident + k)
    return ident + k


def series_compose_invert(gamma: JetSeries, mode: str = "invert", sigma: JetSeries | None = None) -> JetSeries:
    if mode == "invert":
        return invert(gamma)
    if mode == "compose":
        if sigma is None:
            raise ValueError("compose mode needs the inner map sigma")
        return compose(gamma, sigma)
    raise ValueError(f"unknown mode {mode!r}")


def multi_indices(N: int, max_order: int, min_order: int = 1) -> list[MultiIndex]:
    out = []
    for k in range(min_order, max_order + 1):
        out.extend(sorted(_monomials_exact(N, k)))
    return out


def box_indices(upper: Sequence[int]) -> Iterator[MultiIndex]:
    return product(*(range(u + 1) for u in upper))
