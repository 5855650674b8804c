from fractions import Fraction

import numpy as np
import pytest
import sympy as spy
from hypothesis import given, strategies as st
from scipy.linalg import expm, logm

from oracles import symbols, to_sympy
from radonlab.core import Poly
from radonlab.lie import (
    WeightedField,
    bch_log,
    coord_field,
    field_add,
    field_bracket,
    field_is_zero,
    hoermander_check,
    in_span,
    lie_bracket,
    lie_closure,
    span_at_degree,
    zero_field,
)
from test_core import polys


def wf(X, d, tag=""):
    return WeightedField(X, d, tag)


d1, d2 = coord_field(2, 0), coord_field(2, 1)
x1_2 = Poly.var(2, 0)


@st.composite
def fields(draw, n=2, max_deg=2):
    return tuple(draw(polys(n, max_deg=max_deg, max_terms=3)) for _ in range(n))


# ---------------------------------------------------------------------------
# brackets


def test_bracket_examples():
    b = lie_bracket(wf(d1, (1, 0)), wf(coord_field(2, 1, x1_2), (0, 1)))
    assert b.X == d2 and b.d == (1, 1)
    X = wf(coord_field(2, 1, x1_2), (1,))
    assert lie_bracket(X, X).is_zero()
    assert lie_bracket(wf(d1, (1,)), wf(d2, (1,))).is_zero()


@given(fields(), fields())
def test_bracket_matches_sympy(X, Y):
    sy = symbols(2)
    Xs = [to_sympy(p, sy) for p in X]
    Ys = [to_sympy(p, sy) for p in Y]
    want = [sum(Xs[j] * spy.diff(Ys[i], sy[j]) - Ys[j] * spy.diff(Xs[i], sy[j]) for j in range(2))
            for i in range(2)]
    got = field_bracket(X, Y)
    for g, w in zip(got, want):
        assert spy.expand(to_sympy(g, sy) - w) == 0


@given(fields(), fields(), fields())
def test_antisymmetry_and_jacobi(X, Y, Z):
    br = field_bracket
    assert field_is_zero(field_add(br(X, Y), br(Y, X)))
    jac = field_add(field_add(br(X, br(Y, Z)), br(Y, br(Z, X))), br(Z, br(X, Y)))
    assert field_is_zero(jac)


def test_bracket_budget_truncation():
    X = wf(coord_field(1, 0, Poly.var(1, 0, 3)), (1,))
    Y = wf(coord_field(1, 0, Poly.var(1, 0)), (1,))
    # [x^3 d, x d] = -2 x^3 d; cap = budget - 2
    assert lie_bracket(X, Y).X[0] == Poly.var(1, 0, 3).scale(-2)
    assert lie_bracket(X, Y, budget=4).is_zero()
    assert lie_bracket(X, Y, budget=5).X[0] == Poly.var(1, 0, 3).scale(-2)


# ---------------------------------------------------------------------------
# Campbell-Hausdorff


def test_bch_examples():
    a = coord_field(3, 0)
    b = field_add(coord_field(3, 1), coord_field(3, 2, Poly.var(3, 0)))
    got = bch_log(a, b, 3)
    want = field_add(field_add(a, b), coord_field(3, 2, Poly.const(3, Fraction(1, 2))))
    assert got == want
    assert bch_log(a, b, 1) == field_add(a, b)
    c = coord_field(3, 1)
    assert bch_log(a, c, 4) == field_add(a, c)
    with pytest.raises(ValueError):
        bch_log(a, b, 5)


@pytest.mark.parametrize("seed", range(5))
def test_bch_matches_matrix_logarithm(seed):
    # strictly upper triangular 5x5: words of length >= 5 vanish, so order 4 is exact
    rng = np.random.default_rng(seed)
    A = np.triu(rng.normal(size=(5, 5)), 1) * 0.5
    B = np.triu(rng.normal(size=(5, 5)), 1) * 0.5
    got = bch_log(A, B, 4, bracket=lambda u, v: u @ v - v @ u, add=lambda u, v: u + v,
                  scale=lambda u, c: u * float(c))
    want = np.real(logm(expm(A) @ expm(B)))
    assert np.allclose(got, want, atol=1e-10)


# ---------------------------------------------------------------------------
# closures


def test_closure_examples():
    S = [wf(d1, (1, 0), "a"), wf(coord_field(2, 1, x1_2), (0, 1), "b")]
    C = lie_closure(S, 3, "L")
    assert {(w.X, w.d) for w in C} == {(d1, (1, 0)), (S[1].X, (0, 1)), (d2, (1, 1))}
    assert C.complete
    single = lie_closure(S[:1], 3)
    assert len(single) == 1
    a = coord_field(3, 0)
    b = field_add(coord_field(3, 1), coord_field(3, 2, Poly.var(3, 0)))
    C3 = lie_closure([wf(a, (1, 0)), wf(b, (0, 1))], 3)
    assert (coord_field(3, 2), (1, 1)) in {(w.X, w.d) for w in C3}


def test_closure_provenance_degrees():
    S = [wf(d1, (1, 0), "a"), wf(coord_field(2, 1, x1_2 * x1_2), (0, 1), "b")]
    C = lie_closure(S, 5, "L")
    for w in C:
        na, nb = w.tag.count("a"), w.tag.count("b")
        assert w.d == (na, nb)


def test_closure_incomplete_at_cutoff():
    S = [wf(d1, (1,)), wf(coord_field(2, 1, x1_2 * x1_2), (1,))]
    C = lie_closure(S, 2)
    assert not C.complete  # [d1, [d1, x1^2 d2]] = 2 d2 sits at degree 3


@pytest.mark.parametrize("gens", [
    [wf(d1, (1, 0)), wf(coord_field(2, 1, x1_2), (0, 1))],
    [wf(coord_field(3, 0), (1, 0)), wf(field_add(coord_field(3, 1), coord_field(3, 2, Poly.var(3, 0))), (0, 1))],
    [wf(coord_field(2, 0, Poly.var(2, 1)), (1,)), wf(coord_field(2, 1, x1_2 * x1_2), (1,))],
])
def test_L_slices_lie_in_L0_span(gens):
    C = lie_closure(gens, 4, "L")
    C0 = lie_closure(gens, 4, "L0")
    for d0 in C.degrees():
        basis0 = [w.X for w in C0.slice(d0)]
        for w in C.slice(d0):
            assert in_span(w.X, basis0)


def test_span_at_degree_examples():
    a = coord_field(3, 0)
    b = field_add(coord_field(3, 1), coord_field(3, 2, Poly.var(3, 0)))
    C = lie_closure([wf(a, (1, 0)), wf(b, (0, 1))], 3)
    r = span_at_degree(C, (1, 1), point=(0, 0, 0))
    assert r.rank == 1 and np.allclose(np.asarray(r.basis[0], dtype=float), [0, 0, 1])
    assert span_at_degree(C, (2, 2)).rank == 0
    s10 = span_at_degree(C, (1, 0))
    assert s10.rank == 1 and s10.basis[0].X == a


def test_hoermander_examples():
    assert hoermander_check([wf(d1, (1,)), wf(coord_field(2, 1, x1_2), (1,))], (0, 0), 2).spans
    r = hoermander_check([wf(d1, (1,)), wf(d2, (1,))], (0, 0), 1)
    assert r.spans and r.rank == 2
    r = hoermander_check([wf(coord_field(1, 0, Poly.var(1, 0)), (1,))], (0,), 3)
    assert r.rank == 0 and not r.spans


def test_zero_field_helpers():
    z = zero_field(2)
    assert field_is_zero(z)
    with pytest.raises(ValueError):
        WeightedField(d1, (0, 0))
