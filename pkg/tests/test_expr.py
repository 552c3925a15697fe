"""Parser, evaluator, renderer, and directional-derivative tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsgt import expr as ex


def test_parse_single_product():
    tree = ex.parse("0.5*s", ["s"])
    assert tree == ex.Mul(ex.Const(0.5), ex.Var("s"))


def test_parse_max_of_power():
    tree = ex.parse("max(s, s^2)", ["s"])
    assert tree == ex.Max((ex.Var("s"), ex.Pow(ex.Var("s"), 2.0)))


def test_parse_incomplete_input_reports_offset():
    with pytest.raises(ex.ParseError) as err:
        ex.parse("0.5*t +", ["t"])
    assert err.value.offset == 8


def test_parse_unknown_identifier_carries_name():
    with pytest.raises(ex.UnknownIdentifierError) as err:
        ex.parse("0.5*q + s", ["s"])
    assert err.value.name == "q"


@pytest.mark.parametrize("text, bindings, expected", [
    ("0.5*s", {"s": 4.0}, 2.0),
    ("max(s, s^2)", {"s": 0.5}, 0.5),
    ("min(s, 2*s)", {"s": 3.0}, 3.0),
    ("abs(0 - s)", {"s": 2.5}, 2.5),
    ("exp(0)", {}, 1.0),
    ("log(exp(2))", {}, 2.0),
    ("-x_1 + 0.25*x_2", {"x_1": 1.0, "x_2": 2.0}, -0.5),
])
def test_evaluate(text, bindings, expected):
    tree = ex.parse(text, list(bindings) or ["s"])
    assert ex.evaluate(tree, bindings) == pytest.approx(expected, abs=1e-15)


def test_divide_by_zero_is_domain_error():
    tree = ex.parse("1/s", ["s"])
    with pytest.raises(ex.EvalDomainError):
        ex.evaluate(tree, {"s": 0.0})


def test_log_of_nonpositive_is_domain_error():
    tree = ex.parse("log(s)", ["s"])
    with pytest.raises(ex.EvalDomainError):
        ex.evaluate(tree, {"s": 0.0})


def test_negative_base_fractional_power_is_domain_error():
    tree = ex.parse("s^0.5", ["s"])
    with pytest.raises(ex.EvalDomainError):
        ex.evaluate(tree, {"s": -2.0})


def test_unbound_variable():
    with pytest.raises(ex.UnboundVariableError):
        ex.evaluate(ex.parse("s + q", ["s", "q"]), {"s": 1.0})


def test_structural_equality_means_same_values():
    a = ex.parse("0.5*s + max(s, s^2)", ["s"])
    b = ex.parse("0.5*s + max(s, s^2)", ["s"])
    assert a == b
    for v in np.linspace(0.0, 5.0, 23):
        assert ex.evaluate(a, {"s": float(v)}) == ex.evaluate(b, {"s": float(v)})


_EXPRESSIONS = [
    "0.5*s", "s^2 + 3*s", "max(s, s^2, 0.1)", "min(2*s, s + 1)",
    "abs(s - 2)/(1 + s^2)", "exp(0 - s) + log(1 + s)", "-s + 0.25*s^3",
    "(s + 1)*(s - 1)", "2/(1 + s)",
]


@settings(max_examples=60)
@given(st.sampled_from(_EXPRESSIONS), st.floats(min_value=1e-3, max_value=50.0))
def test_render_round_trip_preserves_evaluation(text, value):
    tree = ex.parse(text, ["s"])
    reparsed = ex.parse(ex.render(tree), ["s"])
    assert ex.evaluate(reparsed, {"s": value}) == pytest.approx(
        ex.evaluate(tree, {"s": value}), rel=1e-15, abs=1e-15)


@settings(max_examples=60)
@given(st.sampled_from(_EXPRESSIONS), st.floats(min_value=1e-3, max_value=50.0))
def test_compiled_matches_interpreted(text, value):
    tree = ex.parse(text, ["s"])
    compiled = ex.compile_expr(tree, ("s",))
    assert compiled((value,)) == pytest.approx(ex.evaluate(tree, {"s": value}),
                                               rel=1e-15, abs=1e-15)


def test_directional_bounds_smooth_chain_rule():
    tree = ex.parse("x^2 + 3*x*y", ["x", "y"])
    value, lo, hi = ex.directional_bounds(tree, {"x": 2.0, "y": 1.0},
                                          {"x": 1.0, "y": -1.0})
    # gradient (2x + 3y, 3x) = (7, 6); direction (1, -1) gives 1
    assert value == pytest.approx(10.0)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)


def test_directional_bounds_abs_at_kink():
    tree = ex.parse("abs(x)", ["x"])
    _v, lo, hi = ex.directional_bounds(tree, {"x": 0.0}, {"x": 2.0})
    assert lo == pytest.approx(-2.0) and hi == pytest.approx(2.0)


def test_directional_bounds_max_tie_takes_hull():
    tree = ex.parse("max(x, y)", ["x", "y"])
    _v, lo, hi = ex.directional_bounds(tree, {"x": 1.0, "y": 1.0},
                                       {"x": -3.0, "y": 5.0})
    assert lo == pytest.approx(-3.0) and hi == pytest.approx(5.0)


def test_directional_bounds_match_central_difference_at_smooth_points():
    rng = np.random.default_rng(7)
    tree = ex.parse("x^3 + 2*x*y + exp(0 - y)", ["x", "y"])
    for _ in range(25):
        x, y = rng.uniform(0.2, 2.0, 2)
        dx, dy = rng.uniform(-1.0, 1.0, 2)
        _v, lo, hi = ex.directional_bounds(tree, {"x": x, "y": y}, {"x": dx, "y": dy})
        assert hi == pytest.approx(lo, abs=1e-12)
        h = 1e-6
        num = (ex.evaluate(tree, {"x": x + h * dx, "y": y + h * dy})
               - ex.evaluate(tree, {"x": x - h * dx, "y": y - h * dy})) / (2 * h)
        assert hi == pytest.approx(num, abs=max(1e-6, 1e-4 * abs(hi)))


def test_substitute_composes():
    outer = ex.parse("s^2 + s", ["s"])
    inner = ex.parse("2*s", ["s"])
    composed = ex.substitute(outer, {"s": inner})
    assert ex.evaluate(composed, {"s": 3.0}) == pytest.approx(36.0 + 6.0)
