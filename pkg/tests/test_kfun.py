"""Comparison-function algebra: classification, composition, inversion, lattice."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsgt import expr as ex
from hsgt.kfun import (Classification, KFun, KFunError, KRangeError, classify,
                       compose, default_grid, inverse_kfun, invert,
                       pointwise_max, pointwise_min)


@pytest.mark.parametrize("text, expected", [
    ("2*s", Classification.CLASS_K_INF),
    ("s/(1+s)", Classification.CLASS_K),
    ("1+s", Classification.UNVERIFIED),
    ("s^2", Classification.CLASS_K_INF),
    ("s + s^3", Classification.CLASS_K_INF),
    ("s/(1+s^2)", Classification.POSITIVE_DEFINITE),
])
def test_classification(text, expected):
    assert KFun.from_text(text).classification is expected


def test_classify_rejects_coarse_grid():
    f = KFun.from_text("2*s")
    with pytest.raises(ValueError):
        classify(f, np.geomspace(1e-6, 1e6, 16))


def test_zero_function_is_distinguished():
    z = KFun.zero()
    assert z.is_zero
    assert z(3.7) == 0.0
    assert compose(KFun.from_text("2*s"), z).is_zero
    assert compose(z, KFun.from_text("2*s")).is_zero


@pytest.mark.parametrize("outer, inner, point, expected", [
    ("2*s", "3*s", 5.0, 30.0),
    ("s^2", "s^2", 3.0, 81.0),
    ("0.5*s", "0.5*s", 8.0, 2.0),
])
def test_compose_pointwise(outer, inner, point, expected):
    f = compose(KFun.from_text(outer), KFun.from_text(inner))
    assert f(point) == pytest.approx(expected, rel=1e-12)


def test_compose_recomputes_classification():
    bounded = KFun.from_text("s/(1+s)")
    f = compose(bounded, KFun.from_text("2*s"))
    assert f.classification is Classification.CLASS_K


@pytest.mark.parametrize("text, y, expected", [
    ("2*s", 4.0, 2.0),
    ("s + s^3", 2.0, 1.0),
    ("0.25*s", 1.0, 4.0),
])
def test_invert(text, y, expected):
    assert invert(KFun.from_text(text), y) == pytest.approx(expected, rel=1e-9)


def test_invert_zero_target_is_zero():
    assert invert(KFun.from_text("s + s^3"), 0.0) == 0.0


def test_invert_accepts_bracket_hint():
    f = KFun.from_text("s + s^3")
    assert invert(f, 2.0, bracket_hint=5.0) == pytest.approx(1.0, rel=1e-9)
    assert invert(f, 2.0, bracket_hint=0.01) == pytest.approx(1.0, rel=1e-9)


def test_invert_above_bounded_range_raises():
    f = KFun.from_text("s/(1+s)")
    with pytest.raises(KRangeError):
        invert(f, 2.0)


def test_invert_requires_monotone_class():
    f = KFun.from_text("s/(1+s^2)")
    with pytest.raises(KFunError):
        invert(f, 0.2)


_KINF_TEXTS = ("2*s", "0.5*s", "s + s^3", "s^2", "0.1*s + 0.3*s^2", "3*s/(1+s) + 0.5*s")


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(_KINF_TEXTS),
       st.floats(min_value=math.log(1e-4), max_value=math.log(1e4)))
def test_inversion_round_trip(text, logr):
    f = KFun.from_text(text)
    r = math.exp(logr)
    assert invert(f, f(r)) == pytest.approx(r, rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(_KINF_TEXTS), st.sampled_from(_KINF_TEXTS),
       st.sampled_from(_KINF_TEXTS), st.floats(min_value=1e-3, max_value=1e3))
def test_compose_is_associative_pointwise(a, b, c, s):
    fa, fb, fc = (KFun.from_text(t) for t in (a, b, c))
    left = compose(compose(fa, fb), fc)
    right = compose(fa, compose(fb, fc))
    assert left(s) == pytest.approx(right(s), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("text", ["s/(1+s^2)", "min(s, 2-s+abs(s-1))", "abs(s-1)"])
def test_classify_never_upgrades_nonmonotone(text):
    f = KFun.from_text(text)
    assert f.classification not in (Classification.CLASS_K, Classification.CLASS_K_INF)


def test_pointwise_max_examples():
    f = pointwise_max([KFun.from_text("s^2"), KFun.from_text("2*s")])
    assert f(1.0) == pytest.approx(2.0)
    assert f(4.0) == pytest.approx(16.0)
    g = pointwise_max([KFun.identity(), KFun.from_text("0.5*s")])
    for r in (0.3, 1.0, 7.0):
        assert g(r) == pytest.approx(r)


def test_pointwise_min_examples():
    f = pointwise_min([KFun.identity(), KFun.from_text("2*s")])
    for r in (0.2, 1.0, 9.0):
        assert f(r) == pytest.approx(r)


def test_pointwise_max_of_kinf_is_kinf():
    f = pointwise_max([KFun.from_text("s^2"), KFun.from_text("2*s")])
    assert f.classification is Classification.CLASS_K_INF


def test_pointwise_empty_rejected():
    with pytest.raises(KFunError):
        pointwise_max([])


def test_pointwise_zero_shortcuts():
    f = KFun.from_text("2*s")
    assert pointwise_max([KFun.zero(), f])(3.0) == pytest.approx(6.0)
    assert pointwise_min([KFun.zero(), f]).is_zero


def test_piecewise_linear_and_exact_inverse():
    f = KFun.piecewise_linear([1.0, 2.0, 4.0], [0.5, 1.5, 4.5])
    assert f(0.5) == pytest.approx(0.25)   # interpolated through the origin
    assert f(3.0) == pytest.approx(3.0)
    assert f(8.0) == pytest.approx(4.5 + 1.5 * 4.0)  # tail slope 1.5
    inv = inverse_kfun(f)
    for r in (0.2, 1.0, 2.5, 6.0, 20.0):
        assert inv(f(r)) == pytest.approx(r, rel=1e-12)


def test_linear_fast_path_detection():
    f = KFun.from_text("0.5*s")
    assert f.linear_slope == pytest.approx(0.5)
    assert KFun.from_text("s + s^2").linear_slope is None


def test_grid_metadata_recorded():
    f = KFun.from_text("2*s")
    assert f.grid_info is not None
    assert f.grid_info.points >= 64
    assert f.grid_info.lo <= 1e-6 and f.grid_info.hi >= 1e6


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(_KINF_TEXTS), st.floats(min_value=1e-3, max_value=1e3),
       st.floats(min_value=1e-3, max_value=1e3))
def test_classified_k_functions_are_monotone_samples(text, a, b):
    f = KFun.from_text(text)
    lo, hi = sorted((a, b))
    if hi > lo:
        assert f(hi) >= f(lo)
