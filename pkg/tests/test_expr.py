import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pftlab import expr as ex


def test_literal_and_simple_eval():
    assert ex.parse_expr("1") == ex.Num(1.0)
    e = ex.parse_expr("1 + 0.2*cos(x)")
    assert float(ex.evaluate(e, t=0.0, x=0.0)) == pytest.approx(1.2, abs=1e-15)


def test_time_derivative_of_product():
    e = ex.parse_expr("sin(t)*cos(x)")
    _, dt, dx = ex.eval_with_grad(e, 0.0, 0.0)
    assert float(dt) == pytest.approx(1.0, abs=1e-15)
    assert float(dx) == 0.0


@pytest.mark.parametrize("source, t, x, expected", [
    ("x^2", 0.0, 3.0, (9.0, 0.0, 6.0)),
    ("t", 1.7, -0.4, (1.7, 1.0, 0.0)),
    ("exp(2*t)", 0.5, 0.0, (math.e, 2 * math.e, 0.0)),
])
def test_eval_with_grad_examples(source, t, x, expected):
    got = ex.eval_with_grad(ex.parse_expr(source), t, x)
    np.testing.assert_allclose([float(g) for g in got], expected, rtol=1e-14, atol=1e-14)


def test_exp_gradient_matches_central_differences():
    e = ex.parse_expr("exp(2*t)")
    h = 1e-6
    fd = (ex.evaluate(e, t=0.5 + h, x=0.0) - ex.evaluate(e, t=0.5 - h, x=0.0)) / (2 * h)
    _, dt, _ = ex.eval_with_grad(e, 0.5, 0.0)
    assert abs(fd - dt) / abs(dt) <= 1e-8


def test_precedence_and_associativity():
    assert float(ex.evaluate(ex.parse_expr("-2^2"))) == -4.0
    assert float(ex.evaluate(ex.parse_expr("2^3^2"))) == 512.0
    assert float(ex.evaluate(ex.parse_expr("8/4/2"))) == 1.0
    assert float(ex.evaluate(ex.parse_expr("2^-1"))) == 0.5


def test_parse_error_reports_byte_offset():
    with pytest.raises(ex.ParseError) as info:
        ex.parse_expr("λ + (1 * ", variables=("lam",))
    err = info.value
    assert err.offset == len("λ + (1 * ".encode())
    assert err.found == "end of input"


def test_unknown_identifier_is_rejected():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse_expr("y + 1")
    with pytest.raises(ex.ParseError):
        ex.parse_expr("1 $ 2")


def test_lambda_aliases_map_to_lam():
    for spelling in ("λ", "lambda", "lam"):
        assert ex.parse_expr(f"2*{spelling}", variables=("lam", "x")) == ex.BinOp("*", ex.Num(2.0), ex.Var("lam"))


def test_evaluation_domain_errors():
    with pytest.raises(ex.EvalError):
        ex.evaluate(ex.parse_expr("1/x"), x=np.array([0.0, 1.0]))
    with pytest.raises(ex.EvalError):
        ex.evaluate(ex.parse_expr("log(x)"), x=-1.0)
    with pytest.raises(ex.EvalError):
        ex.evaluate(ex.parse_expr("exp(x)"), x=1000.0)


def test_variable_exponent_derivative():
    e = ex.parse_expr("x^x")
    _, _, d = ex.eval_with_grad(e, 0.0, 2.0)
    assert float(d) == pytest.approx(4 * (math.log(2) + 1), rel=1e-14)


# --- generated expressions ---------------------------------------------------

numbers = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False).map(ex.Num)
leaves = st.one_of(numbers, st.sampled_from([ex.Var("t"), ex.Var("x")]))


def _extend(children):
    return st.one_of(
        st.builds(ex.Neg, children),
        st.builds(ex.BinOp, st.sampled_from(["+", "-", "*", "/", "^"]), children, children),
        st.builds(ex.Call, st.sampled_from(list(ex.FUNCTIONS)), children),
    )


expressions = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=1000, deadline=None)
@given(expressions)
def test_print_parse_round_trip(e):
    assert ex.parse_expr(ex.to_source(e)) == e


smooth_leaves = st.one_of(
    st.floats(min_value=0, max_value=3, allow_nan=False).map(ex.Num),
    st.sampled_from([ex.Var("t"), ex.Var("x")]),
)


def _smooth(children):
    return st.one_of(
        st.builds(ex.Neg, children),
        st.builds(ex.BinOp, st.sampled_from(["+", "-", "*"]), children, children),
        st.builds(ex.Call, st.sampled_from(["sin", "cos", "tanh"]), children),
        st.builds(lambda a: ex.BinOp("^", a, ex.Num(2.0)), children),
    )


@settings(max_examples=200, deadline=None)
@given(st.recursive(smooth_leaves, _smooth, max_leaves=6),
       st.floats(-1, 1), st.floats(-1, 1))
def test_symbolic_gradient_matches_finite_differences(e, t, x):
    h = 1e-5
    val, dt, dx = ex.eval_with_grad(e, t, x)
    fd_t = (ex.evaluate(e, t=t + h, x=x) - ex.evaluate(e, t=t - h, x=x)) / (2 * h)
    fd_x = (ex.evaluate(e, t=t, x=x + h) - ex.evaluate(e, t=t, x=x - h)) / (2 * h)
    scale = 1 + abs(float(val)) + abs(float(dt)) + abs(float(dx))
    assert abs(fd_t - dt) <= 1e-5 * scale**3
    assert abs(fd_x - dx) <= 1e-5 * scale**3


def test_free_variables_and_constant_value():
    e = ex.parse_expr("2*t + 3")
    assert ex.free_variables(e) == frozenset({"t"})
    assert ex.constant_value(ex.parse_expr("2*3")) == 6.0
    assert ex.constant_value(e) is None
