"""Standard example surfaces used by tests, the CLI and the acceptance run."""

from __future__ import annotations

import random
from fractions import Fraction

from .core import DilationSpec, Poly, TruncationPolicy, monomials_upto
from .lie import coord_field, field_add
from .surface import Surface


def translation(policy: TruncationPolicy | None = None) -> Surface:
    """``gamma_t(x) = x + t`` with one parameter."""
    pol = policy or TruncationPolicy(3, 3)
    t, x = Poly.var(2, 0), Poly.var(2, 1)
    return Surface.from_series([x + t], DilationSpec.single(1), 1, pol, name="x+t")


def product_counterexample(policy: TruncationPolicy | None = None) -> Surface:
    """``gamma_{(s,t)}(x) = x - s t`` with two parameters."""
    pol = policy or TruncationPolicy(3, 3)
    s, t, x = Poly.var(3, 0), Poly.var(3, 1), Poly.var(3, 2)
    return Surface.from_series([x - s * t], DilationSpec.coordinate(2), 1, pol, name="x-st")


def heisenberg(policy: TruncationPolicy | None = None) -> Surface:
    """``exp(s d1 + t (d2 + x1 d3) + s t d3 / 2) x``: the flow of ``e^{s d1} e^{t(d2 + x1 d3)}``."""
    pol = policy or TruncationPolicy(3, 3)
    x1 = Poly.var(3, 0)
    fields = {
        (1, 0): coord_field(3, 0),
        (0, 1): field_add(coord_field(3, 1), coord_field(3, 2, x1)),
        (1, 1): coord_field(3, 2, Poly.const(3, Fraction(1, 2))),
    }
    return Surface(DilationSpec.coordinate(2), 3, pol, exp_fields=fields, name="heisenberg")


def parabola(policy: TruncationPolicy | None = None) -> Surface:
    """``gamma_t(x) = (x1 + t, x2 + t^2)``, a one-parameter curved surface."""
    pol = policy or TruncationPolicy(3, 3)
    t, x1, x2 = Poly.var(3, 0), Poly.var(3, 1), Poly.var(3, 2)
    return Surface.from_series([x1 + t, x2 + t * t], DilationSpec.single(1), 2, pol, name="parabola")


def random_surface(seed: int, policy: TruncationPolicy | None = None, N: int | None = None,
                   n: int | None = None, nu: int | None = None, terms: int = 4) -> Surface:
    """A random polynomial ``gamma = x + h`` with small rational coefficients and ``h(0, x) = 0``."""
    rng = random.Random(seed)
    pol = policy or TruncationPolicy(3, 3)
    N = N or rng.choice([1, 2])
    n = n or rng.choice([1, 2])
    if nu is None:
        nu = 1 if N == 1 else rng.choice([1, 2])
    if nu == 1:
        e = DilationSpec.single(N)
    elif nu == N:
        e = DilationSpec.coordinate(N)
    else:
        e = DilationSpec(tuple((1,) * nu for _ in range(N)))
    nv = N + n
    comps = []
    for i in range(n):
        p = Poly.var(nv, N + i)
        for _ in range(terms):
            tdeg = rng.randint(1, pol.L_t)
            xdeg = rng.randint(0, min(2, pol.L_x))
            tm = rng.choice([m for m in monomials_upto(N, tdeg) if sum(m) == tdeg])
            xm = rng.choice([m for m in monomials_upto(n, xdeg) if sum(m) == xdeg])
            c = Fraction(rng.randint(-3, 3), rng.randint(1, 3))
            p = p + Poly.monomial(tuple(tm) + tuple(xm), c)
        comps.append(p)
    return Surface.from_series(comps, e, n, pol, name=f"random{seed}")


def corpus(policy: TruncationPolicy | None = None, n_random: int = 20, seed: int = 0) -> list[Surface]:
    pol = policy or TruncationPolicy(3, 3)
    out = [translation(pol), product_counterexample(pol), heisenberg(pol)]
    out += [random_surface(seed + k, pol) for k in range(n_random)]
    return out
