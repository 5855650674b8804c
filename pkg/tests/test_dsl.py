from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from radonlab import corpus
from radonlab.core import DilationSpec, Poly, TruncationPolicy
from radonlab.dsl import DSLError, infer_dims, parse_field, parse_gamma_dsl, parse_poly, print_surface, tokenize
from radonlab.lie import coord_field
from radonlab.surface import Surface


def test_series_example():
    g = parse_gamma_dsl("x1 - t1*t2", N=2, n=1, dilations=DilationSpec.coordinate(2))
    assert g.gamma() == corpus.product_counterexample().gamma()


def test_exp_example_is_heisenberg():
    g = parse_gamma_dsl("exp[(1,0)->d1] ∘ exp[(0,1)->d2 + x1*d3]", dilations=DilationSpec.coordinate(2))
    assert g.nt == 2 and g.nx == 3
    assert dict(g.exp_fields) == dict(corpus.heisenberg().exp_fields)
    # '@' is an ASCII spelling of the composition sign
    g2 = parse_gamma_dsl("exp[(1,0)->d1] @ exp[(0,1)->d2 + x1*d3]", dilations=DilationSpec.coordinate(2))
    assert dict(g2.exp_fields) == dict(g.exp_fields)


def test_trailing_operator_error():
    with pytest.raises(DSLError) as ei:
        parse_gamma_dsl("x1 + t1 +", N=1, n=1)
    assert (ei.value.line, ei.value.col) == (1, 9)
    assert "ends after operator '+'" in str(ei.value)


@pytest.mark.parametrize("text,fragment,pos", [
    ("x1 + y1", "unknown identifier 'y1'", (1, 6)),
    ("x1 + t3", "exceeds the parameter dimension", (1, 6)),
    ("x2 + t1", "exceeds the space dimension", (1, 1)),
    ("x1 + sin(t1)", "not a polynomial construct", (1, 6)),
    ("x1 + t1^(1/2)", "non-polynomial", (1, 8)),
    ("x1 + t1/x1", "division is only by nonzero constants", (1, 8)),
    ("x1 + d1", "cannot add a function and a vector field", (1, 4)),
    ("x1 + t1 $", "unexpected character '$'", (1, 9)),
    ("x1 + t1\n + (t1", "expected ')'", (2, 7)),
])
def test_error_kinds(text, fragment, pos):
    with pytest.raises(DSLError) as ei:
        parse_gamma_dsl(text, N=1, n=1)
    assert fragment in str(ei.value)
    assert (ei.value.line, ei.value.col) == pos


def test_exp_errors():
    with pytest.raises(DSLError, match="multi-index has 1 entries"):
        parse_gamma_dsl("exp[(1)->d1]", N=2, n=1)
    with pytest.raises(DSLError, match="needs a vector field"):
        parse_gamma_dsl("exp[(1)->x1]", N=1, n=1)
    with pytest.raises(DSLError, match="t-variables"):
        parse_gamma_dsl("exp[(1)->t1*d1]", N=1, n=1)
    with pytest.raises(DSLError, match="nonzero"):
        parse_gamma_dsl("exp[(0)->d1]", N=1, n=1)


def test_component_count_checked():
    with pytest.raises(DSLError, match="expected n = 2"):
        parse_gamma_dsl("x1 + t1", N=1, n=2)


def test_literals_are_exact():
    p = parse_poly("1/3*x1 + 0.25*t1^2 - 2", 1, 1)
    assert p == Poly.monomial((0, 1), Fraction(1, 3)) + Poly.monomial((2, 0), Fraction(1, 4)) - Poly.const(2, 2)


def test_aliases_and_s_variables():
    g = parse_gamma_dsl("x1 - s*t", N=2, n=1, aliases={"s": "t1", "t": "t2"}, dilations=DilationSpec.coordinate(2))
    assert g.gamma() == corpus.product_counterexample().gamma()
    assert parse_poly("s1*s2", 2, 1) == parse_poly("t1*t2", 2, 1)


def test_infer_dims():
    assert infer_dims("x1 + t1, x2 + t1^2") == (1, 2)
    assert infer_dims("exp[(1,0)->d1] ∘ exp[(0,1)->d2 + x1*d3]") == (2, 3)


def test_parse_field():
    assert parse_field("d2 + x1*d3", 3) == tuple(a + b for a, b in zip(coord_field(3, 1), coord_field(3, 2, Poly.var(3, 0))))
    assert parse_field("0", 2) == (Poly.zero(2), Poly.zero(2))
    with pytest.raises(DSLError, match="expected a vector field"):
        parse_field("x1", 2)


def test_tokenize_positions():
    toks = tokenize("x1 +\n t1")
    assert [(t.kind, t.line, t.col) for t in toks] == [
        ("ident", 1, 1), ("+", 1, 4), ("sep", 1, 5), ("ident", 2, 2), ("eof", 2, 4)]


@pytest.mark.parametrize("g", corpus.corpus(n_random=12), ids=lambda g: g.name)
def test_print_parse_round_trip(g):
    text = print_surface(g)
    back = parse_gamma_dsl(text, N=g.nt, n=g.nx, dilations=g.dilations, policy=g.policy)
    if g.series is not None:
        assert back.series == g.series
    else:
        assert dict(back.exp_fields) == dict(g.exp_fields)
    assert back.gamma() == g.gamma()


coef = st.fractions(min_value=-5, max_value=5, max_denominator=6)


@given(st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 2)), coef, max_size=5))
def test_round_trip_random_series(terms):
    p = Poly.var(2, 1)
    for m, c in terms.items():
        if m[0] > 0:
            p = p + Poly.monomial(m, c)
    g = Surface.from_series([p], DilationSpec.single(1), 1, TruncationPolicy(3, 3))
    back = parse_gamma_dsl(print_surface(g), N=1, n=1)
    assert back.series == g.series
