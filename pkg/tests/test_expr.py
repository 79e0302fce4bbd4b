import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifscope.errors import EvaluationPole, ExprSyntaxError, NonIntegerExponent, UnknownIdentifier
from bifscope.expr import (Add, Const, Div, Mul, Neg, Pow, Sub, Var, depends_on, evaluate, parse,
                           to_rational, to_source)

Z, LAM = Var("z"), Var("lambda")


def test_precedence_and_alias():
    assert parse("z^2 + c") == Add(Pow(Z, 2), LAM)
    assert parse("z^2 + lambda") == parse("z^2+c")
    assert parse("-z^2") == Neg(Pow(Z, 2))
    assert parse("1-z-c") == Sub(Sub(Const(1), Z), LAM)
    assert parse("z/2/c") == Div(Div(Z, Const(2)), LAM)


def test_power_is_right_associative():
    # 2^(3^2) = 512, folded because the exponent is a literal
    assert evaluate(parse("z^3^2"), 2, 0) == 2 ** 9


def test_complex_literals():
    assert evaluate(parse("2i"), 0, 0) == 2j
    assert evaluate(parse("(0.5+0.5i)*z"), 2, 0) == 1 + 1j


def test_lattes_source_parses():
    e = parse("(z^2-c)^2/(4*z*(z-1)*(z-c))")
    assert isinstance(e, Div)
    assert depends_on(e, "z") and depends_on(e, "lambda")


@pytest.mark.parametrize("src,offset,kind", [
    ("z^", 2, ExprSyntaxError),
    ("z^0.5", 2, NonIntegerExponent),
    ("z^-1", 2, ExprSyntaxError),
    ("q+z", 0, UnknownIdentifier),
    ("(z+1", 4, ExprSyntaxError),
    ("z+)", 2, ExprSyntaxError),
    ("4z", 1, ExprSyntaxError),
    ("", 0, ExprSyntaxError),
])
def test_positioned_errors(src, offset, kind):
    with pytest.raises(kind) as info:
        parse(src)
    assert info.value.offset == offset


def test_evaluate_examples():
    e = parse("z^2+c")
    assert evaluate(e, 2, 0) == 4
    assert evaluate(e, 0, -2) == -2
    with pytest.raises(EvaluationPole):
        evaluate(parse("1/z"), 0, 0)


def test_evaluate_arrays():
    z = np.linspace(-1, 1, 5) + 0.5j
    assert np.array_equal(evaluate(parse("z*z+c"), z, 1j), z * z + 1j)


@pytest.mark.parametrize("src,num,den", [
    ("z^2+c", {(2, 0): 1, (0, 1): 1}, {(0, 0): 1}),
    ("z + 1/z", {(2, 0): 1, (0, 0): 1}, {(1, 0): 1}),
    ("(z^2-c)^2/(4*z*(z-1)*(z-c))",
     {(4, 0): 1, (2, 1): -2, (0, 2): 1},
     {(3, 0): 4, (2, 0): -4, (2, 1): -4, (1, 1): 4}),
])
def test_to_rational(src, num, den):
    r = to_rational(parse(src))
    for arr, want in ((r.num, num), (r.den, den)):
        got = {k: complex(v) for k, v in np.ndenumerate(arr) if v != 0}
        assert got == {k: complex(v) for k, v in want.items()}


def test_to_rational_removes_common_factor():
    r = to_rational(parse("(z^2-c)/z"))
    assert r.num.shape[0] == 3 and r.den.shape[0] == 2
    r = to_rational(parse("(z^2-1)/(z-1)"))
    assert r.den.shape[0] == 1 and r.num.shape[0] == 2


def test_rational_matches_expression():
    e = parse("(z^2-c)^2/(4*z*(z-1)*(z-c)) + 1/(z+2i)")
    r = to_rational(e)
    rng = np.random.default_rng(1)
    for z, lam in rng.normal(size=(20, 2)) + 1j * rng.normal(size=(20, 2)):
        assert abs(r(z, lam) - evaluate(e, z, lam)) <= 1e-10 * (1 + abs(evaluate(e, z, lam)))


# property tests -------------------------------------------------------------

leaves = st.one_of(
    st.sampled_from([Z, LAM]),
    st.integers(0, 9).map(lambda k: Const(complex(k))),
    st.sampled_from([Const(0.5), Const(2j), Const(1.25j)]),
)


def _extend(children):
    binops = st.sampled_from([Add, Sub, Mul, Div])
    return st.one_of(
        st.tuples(binops, children, children).map(lambda t: t[0](t[1], t[2])),
        children.map(Neg),
        st.tuples(children, st.integers(0, 3)).map(lambda t: Pow(t[0], t[1])),
    )


exprs = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(exprs)
def test_roundtrip(e):
    once = parse(to_source(e))
    assert parse(to_source(once)) == once


@settings(max_examples=300, deadline=None)
@given(exprs)
def test_evaluation_deterministic(e):
    z, lam = 0.3 + 0.7j, -1.1 + 0.2j
    try:
        a = evaluate(e, z, lam)
    except EvaluationPole:
        return
    b = evaluate(e, z, lam)
    assert a == b or (np.isnan(a) and np.isnan(b))


@settings(max_examples=200, deadline=None)
@given(exprs, exprs)
def test_add_node_is_plain_sum(a, b):
    z, lam = 0.4 - 0.1j, 0.9 + 0.3j
    try:
        x, y = evaluate(a, z, lam), evaluate(b, z, lam)
    except EvaluationPole:
        return
    with np.errstate(all="ignore"):
        s = evaluate(Add(a, b), z, lam)
    assert s == x + y or (np.isnan(s) and np.isnan(x + y))


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet="zcl0123456789.+-*/^()i ab", max_size=20))
def test_garbage_never_crashes(s):
    try:
        parse(s)
    except ExprSyntaxError as exc:
        assert 0 <= exc.offset <= len(s)
