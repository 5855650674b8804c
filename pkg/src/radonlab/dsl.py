"""A small expression language for surfaces.

Series form, one polynomial per x-component separated by ``,`` or ``;``::

    x1 - t1*t2
    x1 + t1, x2 + t1^2

Exponential form, a product of exponentials of t-graded vector fields::

    exp[(1,0) -> d1] ∘ exp[(0,1) -> d2 + x1*d3]

``∘`` (or ``@``) multiplies exponentials: ``exp[A] ∘ exp[B] = exp(log(e^A e^B))``
with the logarithm expanded by Campbell-Hausdorff.  Identifiers: ``t1..tN``
(``s1..sN`` are aliases), ``x1..xn``, ``d1..dn`` and any extra aliases passed
in.  Rational literals (``3``, ``1/2``, ``0.25``) are exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .core import DilationSpec, Poly, PreconditionError, TruncationPolicy
from .lie import BCH_MAX_ORDER, bch_log, field_to_str
from .surface import Surface, fields_to_series, series_bracket, series_to_fields


class DSLError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        self.line, self.col = line, col
        super().__init__(f"line {line}, column {col}: {msg}")


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<arrow>->)
  | (?P<pow>\^|\*\*)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),;\[\]@∘])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out, pos, line, lstart = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DSLError(f"unexpected character {text[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        if kind == "nl":
            out.append(Token("sep", "\n", line, pos - lstart + 1))
            line += 1
            lstart = m.end()
        elif kind != "ws":
            tx = m.group()
            if kind == "op" and tx in ",;":
                kind = "sep"
            out.append(Token(kind if kind != "op" else tx, tx, line, pos - lstart + 1))
        pos = m.end()
    out.append(Token("eof", "", line, pos - lstart + 1))
    return out


# ---------------------------------------------------------------------------
# values: a polynomial, or a vector field sum_i coeff_i d_i


@dataclass(frozen=True)
class Val:
    poly: Poly | None = None
    field: tuple[Poly, ...] | None = None


class Parser:
    def __init__(self, text: str, N: int, n: int, aliases: Mapping[str, str] | None = None):
        self.toks = tokenize(text)
        self.i = 0
        self.N, self.n = N, n
        self.nv = N + n
        self.aliases = dict(aliases or {})

    # token helpers ----------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None):
        t = tok or self.tok
        raise DSLError(msg, t.line, t.col)

    def take(self, kind: str | None = None) -> Token:
        t = self.tok
        if kind is not None and t.kind != kind:
            want = "end of input" if kind == "eof" else repr(kind)
            got = "end of input" if t.kind == "eof" else repr(t.text)
            self.error(f"expected {want}, found {got}")
        self.i += 1
        return t

    def skip_newlines(self):
        while self.tok.kind == "sep" and self.tok.text == "\n":
            self.i += 1

    # grammar ------------------------------------------------------------------
    def surface(self):
        self.skip_newlines()
        if self.tok.kind == "ident" and self.tok.text == "exp":
            factors = [self.exp_factor()]
            while self.tok.kind in ("@", "∘") or (self.tok.kind == "sep" and self.tok.text == "\n"):
                if self.tok.kind == "sep":
                    self.skip_newlines()
                    if self.tok.kind == "eof":
                        break
                    if self.tok.kind not in ("@", "∘"):
                        self.error("expected '∘' between exponentials")
                self.take()
                self.skip_newlines()
                factors.append(self.exp_factor())
            self.skip_newlines()
            self.take("eof")
            return "exp", factors
        comps = [self.expr_poly()]
        while self.tok.kind == "sep":
            self.take()
            self.skip_newlines()
            if self.tok.kind == "eof":
                break
            comps.append(self.expr_poly())
        self.take("eof")
        return "series", comps

    def exp_factor(self) -> dict:
        start = self.take("ident")
        if start.text != "exp":
            self.error("expected 'exp'", start)
        self.take("[")
        terms: dict[tuple[int, ...], tuple[Poly, ...]] = {}
        while True:
            self.skip_newlines()
            at = self.tok
            alpha = self.multi_index()
            self.take("arrow")
            v = self.expr()
            if v.field is None:
                self.error("an exponential term needs a vector field (use d1, d2, ...)", at)
            for p in v.field:
                if any(any(m[: self.N]) for m in p.terms):
                    self.error("t-variables are not allowed inside an exponential field", at)
            if alpha in terms:
                terms[alpha] = tuple(a + b for a, b in zip(terms[alpha], v.field))
            else:
                terms[alpha] = v.field
            self.skip_newlines()
            if self.tok.kind == "sep":
                self.take()
                continue
            break
        self.take("]")
        return terms

    def multi_index(self) -> tuple[int, ...]:
        at = self.take("(")
        vals = [int(self.take("num").text)]
        while self.tok.kind == "sep" and self.tok.text == ",":
            self.take()
            vals.append(int(self.take("num").text))
        self.take(")")
        if len(vals) != self.N:
            self.error(f"multi-index has {len(vals)} entries, expected N = {self.N}", at)
        if not any(vals):
            self.error("multi-index must be nonzero", at)
        return tuple(vals)

    def expr_poly(self) -> Poly:
        at = self.tok
        v = self.expr()
        if v.poly is None:
            self.error("vector fields are only allowed inside exp[...]", at)
        return v.poly

    def expr(self) -> Val:
        v = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.take()
            w = self.term()
            v = self.combine(v, w, op)
        return v

    def combine(self, v: Val, w: Val, op: Token) -> Val:
        sign = 1 if op.kind == "+" else -1
        if v.poly is not None and w.poly is not None:
            return Val(poly=v.poly + w.poly.scale(sign))
        if v.field is not None and w.field is not None:
            return Val(field=tuple(a + b.scale(sign) for a, b in zip(v.field, w.field)))
        self.error("cannot add a function and a vector field", op)

    def term(self) -> Val:
        v = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.take()
            w = self.unary()
            if op.kind == "/":
                if w.poly is None or w.poly.degree() > 0 or not w.poly:
                    self.error("division is only by nonzero constants", op)
                c = 1 / w.poly.constant()
                v = Val(poly=v.poly.scale(c)) if v.poly is not None else Val(field=tuple(p.scale(c) for p in v.field))
                continue
            if v.field is not None and w.field is not None:
                self.error("product of two vector fields", op)
            if v.field is not None:
                v = Val(field=tuple(p * w.poly for p in v.field))
            elif w.field is not None:
                v = Val(field=tuple(v.poly * p for p in w.field))
            else:
                v = Val(poly=v.poly * w.poly)
        return v

    def unary(self) -> Val:
        if self.tok.kind in ("-", "+"):
            op = self.take()
            v = self.unary()
            if op.kind == "+":
                return v
            return Val(poly=-v.poly) if v.poly is not None else Val(field=tuple(-p for p in v.field))
        return self.power()

    def power(self) -> Val:
        v = self.atom()
        if self.tok.kind == "pow":
            op = self.take()
            neg = False
            if self.tok.kind == "-":
                neg = True
                self.take()
            if self.tok.kind != "num" or "." in self.tok.text or neg:
                self.error("exponents must be non-negative integers (non-polynomial construct)", op)
            k = int(self.take("num").text)
            if v.field is not None:
                self.error("powers of a vector field are not defined", op)
            v = Val(poly=v.poly.pow(k))
        return v

    def atom(self) -> Val:
        t = self.tok
        if t.kind == "num":
            self.take()
            return Val(poly=Poly.const(self.nv, Fraction(t.text)))
        if t.kind == "(":
            self.take()
            v = self.expr()
            self.take(")")
            return v
        if t.kind == "ident":
            self.take()
            if self.tok.kind == "(" or self.tok.kind == "[":
                self.error(f"function call {t.text!r} is not a polynomial construct", t)
            return self.ident(t)
        if t.kind == "eof" or (t.kind == "sep" and t.text == "\n"):
            prev = self.toks[self.i - 1] if self.i else t
            if prev.kind in ("+", "-", "*", "/", "pow"):
                self.error(f"expression ends after operator {prev.text!r}", prev)
            self.error("unexpected end of input")
        self.error(f"unexpected {t.text!r}")

    def ident(self, t: Token) -> Val:
        name = self.aliases.get(t.text, t.text)
        m = re.fullmatch(r"([tsxd])(\d+)", name)
        if not m:
            self.error(f"unknown identifier {t.text!r}", t)
        kind, k = m.group(1), int(m.group(2))
        if k < 1:
            self.error(f"indices start at 1: {t.text!r}", t)
        if kind in "ts":
            if k > self.N:
                self.error(f"{t.text!r} exceeds the parameter dimension N = {self.N}", t)
            return Val(poly=Poly.var(self.nv, k - 1))
        if k > self.n:
            self.error(f"{t.text!r} exceeds the space dimension n = {self.n}", t)
        if kind == "x":
            return Val(poly=Poly.var(self.nv, self.N + k - 1))
        one = Poly.const(self.nv, 1)
        return Val(field=tuple(one if i == k - 1 else Poly.zero(self.nv) for i in range(self.n)))


def infer_dims(text: str, aliases: Mapping[str, str] | None = None) -> tuple[int, int]:
    """Largest ``t``/``s`` and ``x``/``d`` indices used (after alias expansion)."""
    aliases = aliases or {}
    N = n = 0
    for tok in tokenize(text):
        if tok.kind != "ident":
            continue
        m = re.fullmatch(r"([tsxd])(\d+)", aliases.get(tok.text, tok.text))
        if m:
            k = int(m.group(2))
            if m.group(1) in "ts":
                N = max(N, k)
            else:
                n = max(n, k)
    for m in re.finditer(r"exp\s*\[\s*\(([^)]*)\)", text):
        N = max(N, len(m.group(1).split(",")))
    return N, n


def parse_gamma_dsl(text: str, N: int | None = None, n: int | None = None,
                    dilations: DilationSpec | None = None, policy: TruncationPolicy | None = None,
                    aliases: Mapping[str, str] | None = None, name: str = "") -> Surface:
    """Parse surface text into an exact Surface (series or exponential form)."""
    if dilations is not None:
        N = dilations.N if N is None else N
    if N is None or n is None:
        iN, inn = infer_dims(text, aliases)
        N = iN if N is None else N
        n = inn if n is None else n
    if N < 1 or n < 1:
        raise DSLError("cannot determine the dimensions N and n; declare them", 1, 1)
    pol = policy or TruncationPolicy(3, 3)
    e = dilations or DilationSpec.single(N)
    if e.N != N:
        raise DSLError(f"dilations act on N = {e.N} parameters, text uses N = {N}", 1, 1)
    p = Parser(text, N, n, aliases)
    form, body = p.surface()
    xpos = list(range(N, N + n))
    if form == "series":
        if len(body) != n:
            raise DSLError(f"got {len(body)} components, expected n = {n}", 1, 1)
        return Surface.from_series(body, e, n, pol, name=name)
    # exponential form: restrict fields to x-variables, multiply factors with Campbell-Hausdorff
    series = []
    for terms in body:
        fields = {a: tuple(q.restrict(xpos) for q in X) for a, X in terms.items()}
        series.append(fields_to_series(fields, N, n, pol))
    if len(series) > 1 and pol.L_t > BCH_MAX_ORDER:
        raise PreconditionError(f"composing exponentials is exact only for L_t <= {BCH_MAX_ORDER}")
    V = series[0]
    for W in series[1:]:
        V = bch_log(V, W, min(BCH_MAX_ORDER, pol.L_t), bracket=series_bracket,
                    add=lambda u, v: u + v, scale=lambda u, c: u.scale(c))
    fields = series_to_fields(V)
    return Surface(e, n, pol, exp_fields=fields, name=name)


def print_surface(s: Surface) -> str:
    """Text that :func:`parse_gamma_dsl` maps back to the same surface."""
    N, n = s.nt, s.nx
    tn = [f"t{i + 1}" for i in range(N)]
    xn = [f"x{i + 1}" for i in range(n)]
    if s.series is not None:
        return ", ".join(p.to_str(tn + xn) for p in s.series.comps)
    parts = []
    for a, X in s.exp_fields.items():
        X = tuple(p.restrict(list(range(N, N + n))) if p.nvars == N + n else p for p in X)
        parts.append(f"({','.join(str(v) for v in a)}) -> {field_to_str(X, xn)}")
    return "exp[" + "; ".join(parts) + "]"


def parse_poly(text: str, N: int, n: int, aliases: Mapping[str, str] | None = None) -> Poly:
    """One polynomial in ``(t, x)`` (``N + n`` variables, t first)."""
    p = Parser(text, N, n, aliases)
    out = p.expr_poly()
    p.take("eof")
    return out


def parse_field(text: str, n: int, aliases: Mapping[str, str] | None = None) -> tuple[Poly, ...]:
    """A vector field ``sum_i c_i(x) d_i`` with coefficients in the n x-variables."""
    p = Parser(text, 0, n, aliases)
    at = p.tok
    v = p.expr()
    p.take("eof")
    if v.field is None:
        if v.poly is not None and not v.poly:
            return tuple(Poly.zero(n) for _ in range(n))
        p.error("expected a vector field (use d1, d2, ...)", at)
    return v.field
