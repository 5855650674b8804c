"""Surfaces ``gamma_t(x)``, their W fields, exponential fields and conditions.

Conventions used throughout:

* ``exp(V) x`` is the Lie series ``sum_k V^k(x) / k!`` of a t-dependent field
  ``V(t) = sum t^a X_a`` (the time-one flow of the frozen field).
* ``W = (E_t gamma) o gamma^{-1}`` with ``E_t`` the Euler operator in ``t``.
  It equals ``d/d eps |_{eps=1} gamma_{eps t} o gamma_t^{-1}``.
* ``compose_surfaces(g1, g2)`` has exponent ``log(e^{V1} e^{V2})``.  As an
  operator on functions this is ``f -> f o g2 o g1``, so pointwise the new
  surface is ``g2_{t2}(g1_{t1}(x))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    DilationSpec,
    DimensionError,
    JetSeries,
    MultiIndex,
    Poly,
    PreconditionError,
    TruncationPolicy,
    check_identity_at_zero,
    classify_power,
    compose,
    deg,
    invert,
    multi_indices,
)
from .lie import (
    Field,
    WeightedField,
    apply_field,
    bch_log,
    field_bracket,
    field_is_zero,
    lie_bracket,
    lie_closure,
)

# ---------------------------------------------------------------------------
# t-dependent field series


def series_bracket(U: JetSeries, V: JetSeries) -> JetSeries:
    """Bracket of two t-dependent fields, t acting as a parameter."""
    keep = U.trunc.keep
    comps = field_bracket(U.comps, V.comps, U.nt, keep)
    return JetSeries(U.nt, U.nx, U.policy, comps, U.saturated or V.saturated)


def lie_exp(V: JetSeries) -> JetSeries:
    """``exp(V) x`` as a Lie series; terms of order k carry ``t^k`` so the sum is finite."""
    nt, nx, pol = V.nt, V.nx, V.policy
    keep = V.trunc.keep
    out = []
    for i in range(nx):
        term = Poly.var(nt + nx, nt + i)
        total = term
        for k in range(1, pol.L_t + 1):
            term = apply_field(V.comps, term, nt, keep).scale(Fraction(1, k))
            if not term:
                break
            total = total + term
        out.append(total)
    return JetSeries(nt, nx, pol, tuple(out), V.saturated)


def fields_to_series(fields: Mapping[MultiIndex, Field], nt: int, nx: int,
                     policy: TruncationPolicy) -> JetSeries:
    """``sum t^a X_a`` from a map ``a -> field``."""
    return JetSeries.from_terms(nt, nx, policy, {tuple(a): tuple(X) for a, X in fields.items()}, nx)


def series_to_fields(V: JetSeries) -> dict[MultiIndex, Field]:
    return {a: X for a, X in V.terms().items() if any(a) and not field_is_zero(X)}


# ---------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class Surface:
    """A surface in series form (``series``) or exponential form (``exp_fields``)."""

    dilations: DilationSpec
    nx: int
    policy: TruncationPolicy
    series: JetSeries | None = None
    exp_fields: Mapping[MultiIndex, Field] | None = None
    name: str = ""

    def __post_init__(self):
        if (self.series is None) == (self.exp_fields is None):
            raise ValueError("give exactly one of series or exp_fields")
        if self.series is not None:
            s = self.series
            if s.nt != self.nt or s.nx != self.nx:
                raise DimensionError("series variables do not match the dilation structure")
            if s.policy != self.policy:
                object.__setattr__(self, "series", s.with_policy(self.policy))
            check_identity_at_zero(self.series)
        else:
            clean = {}
            for a, X in self.exp_fields.items():
                a = tuple(int(v) for v in a)
                if len(a) != self.nt:
                    raise DimensionError(f"multi-index {a} does not have N = {self.nt} entries")
                if not any(a):
                    raise PreconditionError("exponential fields need alpha != 0")
                if len(X) != self.nx:
                    raise DimensionError("field has the wrong number of components")
                if sum(a) <= self.policy.L_t and not field_is_zero(X):
                    clean[a] = tuple(X)
            object.__setattr__(self, "exp_fields", dict(sorted(clean.items(), key=lambda kv: (sum(kv[0]), kv[0]))))

    @property
    def nt(self) -> int:
        return self.dilations.N

    @property
    def form(self) -> str:
        return "series" if self.series is not None else "exponential"

    def gamma(self) -> JetSeries:
        if self.series is not None:
            return self.series
        return lie_exp(self.exponent())

    def exponent(self) -> JetSeries:
        """``V(t) = sum t^a X_a`` (computed if the surface is in series form)."""
        if self.exp_fields is not None:
            # fields carry polynomials in x; lift them to (t, x)
            lifted = {a: tuple(p.embed(self.nt + self.nx, range(self.nt, self.nt + self.nx))
                               if p.nvars == self.nx else p for p in X)
                      for a, X in self.exp_fields.items()}
            return _lifted_series(lifted, self.nt, self.nx, self.policy)
        return _extract_exponent(self.series)

    def with_policy(self, policy: TruncationPolicy) -> "Surface":
        if self.series is not None:
            return Surface(self.dilations, self.nx, policy, series=self.series.with_policy(policy), name=self.name)
        return Surface(self.dilations, self.nx, policy, exp_fields=self.exp_fields, name=self.name)

    def same_as(self, other: "Surface") -> bool:
        return self.gamma() == other.gamma()

    @classmethod
    def from_series(cls, comps: Sequence[Poly], dilations: DilationSpec, nx: int,
                    policy: TruncationPolicy, name: str = "") -> "Surface":
        return cls(dilations, nx, policy, series=JetSeries(dilations.N, nx, policy, tuple(comps)), name=name)

    @classmethod
    def identity(cls, dilations: DilationSpec, nx: int, policy: TruncationPolicy) -> "Surface":
        return cls(dilations, nx, policy, series=JetSeries.identity(dilations.N, nx, policy), name="id")


def _lifted_series(fields: Mapping[MultiIndex, Field], nt: int, nx: int, policy) -> JetSeries:
    nv = nt + nx
    comps = [Poly.zero(nv) for _ in range(nx)]
    for a, X in fields.items():
        tm = Poly.monomial(tuple(a) + (0,) * nx)
        for i, p in enumerate(X):
            comps[i] = comps[i] + tm.mul(p)
    return JetSeries(nt, nx, policy, tuple(comps))


def _extract_exponent(gamma: JetSeries) -> JetSeries:
    check_identity_at_zero(gamma)
    ident = JetSeries.identity(gamma.nt, gamma.nx, gamma.policy)
    V = gamma - ident
    for _ in range(gamma.policy.L_t):
        V = V + (gamma - lie_exp(V))
    return V


# ---------------------------------------------------------------------------
# W fields


@dataclass(frozen=True)
class WField:
    W: JetSeries
    dilations: DilationSpec

    def __post_init__(self):
        if self.W.arity != self.W.nx:
            raise DimensionError("W must be a vector field")
        zero = self.W.t_part(0)
        if not zero.is_zero():
            raise PreconditionError("W(0, x) must vanish")

    @property
    def taylor(self) -> dict[MultiIndex, WeightedField]:
        """``alpha -> (Xhat_alpha, deg alpha)`` for the nonzero coefficients."""
        out = {}
        for a, X in self.W.terms().items():
            if any(a) and not field_is_zero(X):
                out[a] = WeightedField(X, deg(a, self.dilations), f"Xh{list(a)}")
        return out


def gamma_to_w(gamma: Surface) -> WField:
    g = gamma.gamma()
    W = compose(g.euler_t(), invert(g))
    return WField(W, gamma.dilations)


def w_to_gamma(W: WField, policy: TruncationPolicy | None = None, nx: int | None = None) -> Surface:
    """Solve ``E_t h = W(t, x + h)`` degree by degree; ``gamma = x + h``."""
    Ws = W.W
    ident = JetSeries.identity(Ws.nt, Ws.nx, Ws.policy)
    h = JetSeries.zeros(Ws.nt, Ws.nx, Ws.policy, Ws.nx)
    nt = Ws.nt
    for _ in range(Ws.policy.L_t):
        rhs = compose(Ws, ident + h)
        h = rhs.map(lambda p: p.map_terms(lambda m, c: c / sum(m[:nt]) if sum(m[:nt]) else 0))
    return Surface(W.dilations, Ws.nx, Ws.policy, series=ident + h)


def flow_w_numeric(W: WField, t, x: np.ndarray, eps0: float = 1e-3,
                   steps: int = 64) -> np.ndarray:
    """Numerically integrate ``d omega/d eps = W(eps t, omega)/eps`` from ``eps0`` to 1.

    ``omega(eps0)`` is bootstrapped from the series solution, where the
    ``1/eps`` singularity is harmless.  ``x`` has shape ``(..., n)``; ``t`` is
    either one parameter vector or an array of shape ``(..., N)`` matching ``x``.
    """
    gam = w_to_gamma(W).gamma()
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1] + (W.W.nt,))
    tcols = [t[..., i] for i in range(t.shape[-1])]
    pts = [eps0 * ti for ti in tcols] + [x[..., i] for i in range(x.shape[-1])]
    omega = np.stack([np.broadcast_to(p.eval_numeric(pts), x.shape[:-1]) for p in gam.comps], axis=-1)
    comps = W.W.comps

    def rhs(eps, om):
        args = [eps * ti for ti in tcols] + [om[..., i] for i in range(om.shape[-1])]
        return np.stack([np.broadcast_to(p.eval_numeric(args), om.shape[:-1]) for p in comps], axis=-1) / eps

    hstep = (1.0 - eps0) / steps
    e = eps0
    for _ in range(steps):
        k1 = rhs(e, omega)
        k2 = rhs(e + hstep / 2, omega + hstep / 2 * k1)
        k3 = rhs(e + hstep / 2, omega + hstep / 2 * k2)
        k4 = rhs(e + hstep, omega + hstep * k3)
        omega = omega + hstep / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        e += hstep
    return omega


# ---------------------------------------------------------------------------
# exponential fields and the pure / non-pure split


def extract_exp_fields(gamma: Surface) -> dict[MultiIndex, WeightedField]:
    """``alpha -> (X_alpha, deg alpha)`` with ``gamma ~ exp(sum t^a X_a) x``."""
    e = gamma.dilations
    if gamma.exp_fields is not None:
        raw = {a: _drop_t(X, gamma.nt) for a, X in gamma.exp_fields.items()}
    else:
        raw = series_to_fields(gamma.exponent())
    return {a: WeightedField(X, deg(a, e), f"X{list(a)}") for a, X in raw.items() if not field_is_zero(X)}


def _drop_t(X: Field, nt: int) -> Field:
    nx = len(X)
    if X and X[0].nvars == nx:
        return tuple(X)
    return tuple(p.restrict(range(nt, nt + nx)) for p in X)


@dataclass
class Partition:
    """Pure and non-pure weighted fields; ``zeros`` lists alphas with a zero field."""

    P_all: list[WeightedField]
    N_all: list[WeightedField]
    alphas_P: list[MultiIndex]
    alphas_N: list[MultiIndex]
    zeros: set = field(default_factory=set)

    @property
    def P(self) -> list[WeightedField]:
        return [w for w in self.P_all if not w.is_zero()]

    @property
    def N(self) -> list[WeightedField]:
        return [w for w in self.N_all if not w.is_zero()]


def partition_pure(fields: Mapping[MultiIndex, WeightedField], e: DilationSpec, nx: int | None = None,
                   L_t: int | None = None) -> Partition:
    """Split by ``classify_power``.  With ``L_t`` every alpha up to that order is listed."""
    alphas = set(fields)
    if L_t is not None:
        alphas |= set(multi_indices(e.N, L_t))
    if nx is None:
        nx = next(iter(fields.values())).n if fields else 1
    P, N, aP, aN, zeros = [], [], [], [], set()
    for a in sorted(alphas, key=lambda a: (sum(a), a)):
        w = fields.get(a)
        if w is None:
            w = WeightedField(tuple(Poly.zero(nx) for _ in range(nx)), deg(a, e), f"X{list(a)}")
            zeros.add(a)
        elif w.is_zero():
            zeros.add(a)
        cls = classify_power(a, e)
        if cls.kind == "pure":
            P.append(w)
            aP.append(a)
        elif cls.kind == "nonpure":
            N.append(w)
            aN.append(a)
    return Partition(P, N, aP, aN, zeros)


# ---------------------------------------------------------------------------
# inverse and composition


def invert_surface(gamma: Surface) -> Surface:
    """Exponential form with negated fields."""
    fields = {a: tuple(-p for p in w.X) for a, w in extract_exp_fields(gamma).items()}
    return Surface(gamma.dilations, gamma.nx, gamma.policy, exp_fields=fields,
                   name=f"inv({gamma.name})" if gamma.name else "")


def compose_surfaces(g1: Surface, g2: Surface) -> Surface:
    """Exponent ``log(e^{V1} e^{V2})`` on the concatenated t-variables and gradings."""
    if g1.nx != g2.nx:
        raise DimensionError("surfaces act on different spaces")
    L_t = max(g1.policy.L_t, g2.policy.L_t)
    L_x = max(g1.policy.L_x, g2.policy.L_x)
    if L_t > 4:
        raise ValueError("composition uses Campbell-Hausdorff terms through order 4; need L_t <= 4")
    pol = TruncationPolicy(L_t, L_x, min(g1.policy.tolerance, g2.policy.tolerance))
    e = g1.dilations.concat(g2.dilations)
    N1, N2, nx = g1.nt, g2.nt, g1.nx
    nt = N1 + N2
    f1 = {a + (0,) * N2: w.X for a, w in extract_exp_fields(g1).items()}
    f2 = {(0,) * N1 + a: w.X for a, w in extract_exp_fields(g2).items()}
    V1 = _lifted_series({a: _lift(X, nt) for a, X in f1.items()}, nt, nx, pol)
    V2 = _lifted_series({a: _lift(X, nt) for a, X in f2.items()}, nt, nx, pol)
    Z = bch_log(V1, V2, L_t, bracket=series_bracket, add=lambda u, v: u + v, scale=lambda u, c: u.scale(c))
    fields = series_to_fields(Z)
    name = f"({g1.name})*({g2.name})" if g1.name or g2.name else ""
    return Surface(e, nx, pol, exp_fields=fields, name=name)


def _lift(X: Field, nt: int) -> Field:
    nx = len(X)
    return tuple(p.embed(nt + nx, range(nt, nt + nx)) for p in X)


# ---------------------------------------------------------------------------
# conditions


@dataclass
class ConditionVerdict:
    condition: str
    status: str  # "Proved" | "Refuted" | "Unknown"
    witness: object = None
    cutoffs: dict = field(default_factory=dict)
    details: list = field(default_factory=list)

    def to_dict(self) -> dict:
        from .report import to_jsonable
        return {
            "condition": self.condition,
            "status": self.status,
            "cutoffs": self.cutoffs,
            "witness": to_jsonable(self.witness),
            "details": to_jsonable(self.details),
        }


def _combine(statuses: Iterable[str]) -> str:
    statuses = list(statuses)
    if "Refuted" in statuses:
        return "Refuted"
    if all(s == "Proved" for s in statuses):
        return "Proved"
    return "Unknown"


def check_condition(gamma: Surface, which: str, cutoff: int | None = None,
                    numeric: bool = False) -> ConditionVerdict:
    """Decide condition ``I``, ``II``, ``II.F``, ``II.A``, ``III``, ``III.F``, ``III.A`` at truncation."""
    from .geometry import control_check, control_check_w

    which = which.upper()
    pol = gamma.policy
    budget = pol.budget
    if cutoff is None:
        cutoff = min(4, budget)
    cutoff = min(cutoff, budget)
    cut = {"L_t": pol.L_t, "L_x": pol.L_x, "closure_cutoff": cutoff, "budget": budget}
    if which in ("II", "III"):
        parts = [check_condition(gamma, which + ".F", cutoff, numeric),
                 check_condition(gamma, which + ".A", cutoff, numeric)]
        return ConditionVerdict(which, _combine(p.status for p in parts), [p.to_dict() for p in parts], cut)
    e = gamma.dilations
    Wf = gamma_to_w(gamma)

    if which in ("II.A", "III.A"):
        fields = Wf.taylor if which == "II.A" else extract_exp_fields(gamma)
        part = partition_pure(fields, e, gamma.nx, pol.L_t)
        targets = part.N
        if not targets:
            return ConditionVerdict(which, "Proved", {"vacuous": True, "reason": "no nonzero non-pure fields"}, cut)
        P = [w.truncated(budget) for w in part.P]
        need = max(w.size for w in targets)
        ccut = min(max(cutoff, need, max((w.size for w in P), default=0)), budget)
        C = lie_closure(P, ccut, "L", budget) if P else None
        certs = []
        for tgt in targets:
            S = C if C is not None else _EmptyClosure(budget)
            cert = control_check(tgt.truncated(budget), S, budget=budget, numeric=numeric)
            certs.append({"target": tgt, "certificate": cert})
        status = _combine(c["certificate"].status for c in certs)
        return ConditionVerdict(which, status, certs, {**cut, "closure_cutoff": ccut})

    if which in ("I", "II.F", "III.F"):
        if which == "II.F":
            from .prep import taylor_prepare
            prep = taylor_prepare(Wf.W)
            F0 = [WeightedField(X, deg(a, e), f"Xh{list(a)}") for a, X in zip(prep.alphas, prep.fields)
                  if any(a) and not field_is_zero(X)]
        elif which == "III.F":
            F0 = list(extract_exp_fields(gamma).values())
        else:
            part = partition_pure(Wf.taylor, e, gamma.nx)
            F0 = part.P
        return _finite_type(which, F0, Wf, budget, cutoff, cut, numeric, control_check, control_check_w)
    raise ValueError(f"unknown condition {which!r}")


class _EmptyClosure:
    """Stand-in for the closure of an empty set (complete by definition)."""

    def __init__(self, budget):
        self.elements = ()
        self.complete = True
        self.budget = budget

    def __iter__(self):
        return iter(())


def _finite_type(which, F0, Wf, budget, cutoff, cut, numeric, control_check, control_check_w):
    from .prep import finite_generate

    F0 = [w.truncated(budget) for w in F0 if not w.is_zero()]
    details: list = []
    C0 = _EmptyClosure(budget)
    if F0:
        ccut = min(max(cutoff, max(w.size for w in F0)), budget)
        C0 = lie_closure(F0, ccut, "L0", budget)
        gen = finite_generate(C0.elements, budget)
        chosen = [(X, d) for X, d in gen.F]
        keys = {(w.X, w.d) for w in F0}
        lst = list(F0) + [WeightedField(X, d, "gen") for X, d in chosen if (X, d) not in keys]
    else:
        lst, ccut = [], cutoff
    details.append({"generated_list": lst})
    # Only for (I) is F0 the whole admissible family, so only there can a
    # pointwise failure against its (complete) closure refute the condition.
    refute = which == "I"
    wcert = control_check_w(Wf, lst, budget=budget, numeric=numeric, refute=refute, refute_set=C0)
    statuses = [wcert.status]
    details.append({"controls_W": wcert})
    unchecked = 0
    for i in range(len(lst)):
        for j in range(i + 1, len(lst)):
            a, b = lst[i], lst[j]
            if a.size + b.size > ccut:
                unchecked += 1
                continue
            br = lie_bracket(a, b, budget)
            if br.is_zero():
                continue
            cert = control_check(br, lst, budget=budget, numeric=numeric, refute=False)
            statuses.append(cert.status)
            details.append({"bracket": (i, j), "certificate": cert})
    details.append({"brackets_beyond_cutoff": unchecked})
    status = _combine(statuses)
    return ConditionVerdict(which, status, details, {**cut, "closure_cutoff": ccut})
