"""Comparison-function algebra: classification, composition, inversion, lattice ops.

A :class:`KFun` is a scalar function of one nonnegative argument, used for
every gain, scaling path component, decay rate, and sandwich bound in the
toolkit.  Class membership (positive definite / class-K / class-K-infinity)
is certified by sampling on a logarithmic grid, never symbolically: a failed
check refutes a class, a passed check records the grid it passed on.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as ex


class KFunError(Exception):
    pass


class KRangeError(KFunError):
    """Inversion target above the sampled range of a bounded class-K function."""


class Classification(enum.Enum):
    ZERO = "zero"
    UNVERIFIED = "unverified"
    POSITIVE_DEFINITE = "positive-definite"
    CLASS_K = "class-K"
    CLASS_K_INF = "class-Kinf"


_STRENGTH = {
    Classification.ZERO: -1,
    Classification.UNVERIFIED: 0,
    Classification.POSITIVE_DEFINITE: 1,
    Classification.CLASS_K: 2,
    Classification.CLASS_K_INF: 3,
}


def at_least(c: Classification, floor: Classification) -> bool:
    return _STRENGTH[c] >= _STRENGTH[floor]


def default_grid(lo: float = 1e-6, hi: float = 1e6, points: int = 64) -> np.ndarray:
    if points < 64 or lo > 1e-6 or hi < 1e6:
        raise ValueError("classification grid must have >= 64 points spanning [1e-6, 1e6]")
    return np.geomspace(lo, hi, points)


_UNBOUNDED_PROBE = np.geomspace(1e6, 1e12, 16)
_UNBOUNDED_LEVEL = 1e9
_ZERO_AT_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class GridInfo:
    lo: float
    hi: float
    points: int


@dataclass(frozen=True)
class KFun:
    """A scalar monotone-candidate function with a sampled classification.

    Backed by an expression tree in the single variable ``s`` when one is
    available; numerically defined functions (bisection inverses, grid fits)
    carry only the evaluator and a description.
    """

    fn: Callable[[float], float]
    classification: Classification
    expr: Optional[ex.Expr] = None
    description: str = ""
    grid_info: Optional[GridInfo] = None
    linear_slope: Optional[float] = None
    nodes: Optional[tuple] = field(default=None, repr=False)  # piecewise-linear knots

    def __call__(self, s: float) -> float:
        if self.linear_slope is not None:
            return self.linear_slope * s
        try:
            return self.fn(s)
        except ZeroDivisionError as exc:
            raise ex.EvalDomainError("division by zero") from exc
        except (ValueError, OverflowError) as exc:
            raise ex.EvalDomainError(str(exc)) from exc

    @property
    def is_zero(self) -> bool:
        return self.classification is Classification.ZERO

    def describe(self) -> str:
        if self.is_zero:
            return "0"
        if self.expr is not None:
            return ex.render(self.expr)
        return self.description or "<numeric>"

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero() -> "KFun":
        return KFun(fn=lambda s: 0.0, classification=Classification.ZERO,
                    expr=ex.Const(0.0), description="0", linear_slope=None)

    @staticmethod
    def from_expr(expression: ex.Expr, grid: Optional[np.ndarray] = None) -> "KFun":
        names = ex.free_vars(expression)
        if not names <= {"s"}:
            raise KFunError(f"expected a function of 's', found variables {sorted(names)}")
        if expression == ex.Const(0.0):
            return KFun.zero()
        compiled = ex.compile_expr(expression, ("s",))
        fn = lambda s: compiled((s,))
        g = default_grid() if grid is None else np.asarray(grid, dtype=float)
        cls = classify_callable(fn, g)
        slope = _linear_slope(fn, g) if at_least(cls, Classification.CLASS_K) else None
        return KFun(fn=fn, classification=cls, expr=expression,
                    grid_info=GridInfo(float(g[0]), float(g[-1]), len(g)),
                    linear_slope=slope)

    @staticmethod
    def from_text(text: str, grid: Optional[np.ndarray] = None) -> "KFun":
        return KFun.from_expr(ex.parse(text, ("s",)), grid)

    @staticmethod
    def from_callable(fn: Callable[[float], float], description: str,
                      grid: Optional[np.ndarray] = None) -> "KFun":
        g = default_grid() if grid is None else np.asarray(grid, dtype=float)
        cls = classify_callable(fn, g)
        slope = _linear_slope(fn, g) if at_least(cls, Classification.CLASS_K) else None
        return KFun(fn=fn, classification=cls, description=description,
                    grid_info=GridInfo(float(g[0]), float(g[-1]), len(g)),
                    linear_slope=slope)

    @staticmethod
    def identity() -> "KFun":
        return KFun.from_text("s")

    @staticmethod
    def linear(c: float) -> "KFun":
        return KFun.from_expr(ex.Mul(ex.Const(float(c)), ex.Var("s")))

    @staticmethod
    def piecewise_linear(xs: Sequence[float], ys: Sequence[float],
                         description: str = "piecewise-linear fit") -> "KFun":
        """Monotone interpolant through (0,0) and the given knots.

        Beyond the last knot the function continues with the final segment's
        slope (at least a small positive slope, so unboundedness is kept).
        """
        xs = [float(v) for v in xs]
        ys = [float(v) for v in ys]
        if len(xs) != len(ys) or not xs:
            raise KFunError("piecewise_linear needs matching nonempty knot lists")
        if xs[0] > 0.0:
            xs = [0.0] + xs
            ys = [0.0] + ys
        for a, b in zip(xs, xs[1:]):
            if b <= a:
                raise KFunError("piecewise_linear knots must strictly increase")
        tail = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2]) if len(xs) > 1 else 1.0
        tail = max(tail, 1e-12)
        nodes = tuple(zip(xs, ys))

        def fn(s: float, _xs=tuple(xs), _ys=tuple(ys), _tail=tail) -> float:
            if s <= 0.0:
                return _ys[0] if s == _xs[0] else _ys[0] + s  # below zero never queried
            if s >= _xs[-1]:
                return _ys[-1] + _tail * (s - _xs[-1])
            j = bisect_left(_xs, s)
            x0, x1 = _xs[j - 1], _xs[j]
            y0, y1 = _ys[j - 1], _ys[j]
            return y0 + (y1 - y0) * (s - x0) / (x1 - x0)

        out = KFun.from_callable(fn, description)
        return replace(out, nodes=nodes)

    # -- algebra -----------------------------------------------------------

    def compose(self, inner: "KFun", grid: Optional[np.ndarray] = None) -> "KFun":
        return compose(self, inner, grid)

    def invert(self, y: float, bracket_hint: Optional[float] = None) -> float:
        return invert(self, y, bracket_hint)


def _linear_slope(fn: Callable[[float], float], grid: np.ndarray) -> Optional[float]:
    """Slope when the sampled function is exactly proportional to its argument."""
    try:
        base = fn(1.0)
    except Exception:
        return None
    if not math.isfinite(base) or base <= 0.0:
        return None
    probes = list(grid) + [3.7, 0.0317]
    for r in probes:
        try:
            v = fn(float(r))
        except Exception:
            return None
        if not math.isfinite(v) or abs(v - base * r) > 1e-12 * max(abs(v), base * r):
            return None
    return base


def classify_callable(fn: Callable[[float], float], grid: np.ndarray) -> Classification:
    """Strongest class consistent with sampled checks; never claims a refuted one."""
    if len(grid) < 64 or grid[0] > 1e-6 or grid[-1] < 1e6:
        raise ValueError("classification grid must have >= 64 points spanning [1e-6, 1e6]")
    try:
        v0 = fn(0.0)
    except (ZeroDivisionError, ValueError):
        return Classification.UNVERIFIED
    except OverflowError:
        return Classification.UNVERIFIED
    if not math.isfinite(v0) or abs(v0) > _ZERO_AT_ZERO_TOL:
        return Classification.UNVERIFIED

    values = []
    overflowed = False
    for r in grid:
        try:
            v = fn(float(r))
        except OverflowError:
            overflowed = True
            break
        except (ZeroDivisionError, ValueError) as exc:
            raise ex.EvalDomainError(str(exc)) from exc
        if math.isinf(v):
            overflowed = True
            break
        values.append(v)
    if not values:
        return Classification.UNVERIFIED
    arr = np.asarray(values)
    if np.any(arr <= 0.0):
        return Classification.UNVERIFIED
    strictly_increasing = bool(np.all(np.diff(arr) > 0.0))
    if not strictly_increasing:
        return Classification.POSITIVE_DEFINITE
    if overflowed:
        return Classification.CLASS_K_INF
    unbounded = arr[-1] > _UNBOUNDED_LEVEL
    if not unbounded:
        for r in _UNBOUNDED_PROBE:
            try:
                v = fn(float(r))
            except OverflowError:
                unbounded = True
                break
            except (ZeroDivisionError, ValueError):
                break
            if math.isinf(v) or v > _UNBOUNDED_LEVEL:
                unbounded = True
                break
    return Classification.CLASS_K_INF if unbounded else Classification.CLASS_K


def classify(f: KFun, grid: Optional[np.ndarray] = None) -> Classification:
    if f.is_zero:
        return Classification.ZERO
    g = default_grid() if grid is None else np.asarray(grid, dtype=float)
    return classify_callable(f.__call__, g)


def compose(outer: KFun, inner: KFun, grid: Optional[np.ndarray] = None) -> KFun:
    """Pointwise composition ``outer(inner(s))`` with the class recomputed."""
    if outer.is_zero:
        return KFun.zero()
    if inner.is_zero:
        v0 = outer(0.0)
        if abs(v0) <= _ZERO_AT_ZERO_TOL:
            return KFun.zero()
        return KFun.from_expr(ex.Const(v0))
    if outer.expr is not None and inner.expr is not None:
        return KFun.from_expr(ex.substitute(outer.expr, {"s": inner.expr}), grid)
    fn = lambda s, f=outer, g=inner: f(g(s))
    return KFun.from_callable(fn, f"{outer.describe()} o {inner.describe()}", grid)


_BRACKET_LIMIT = 1e12


def invert(f: KFun, y: float, bracket_hint: Optional[float] = None) -> float:
    """Solve ``f(r) = y`` for r >= 0 by bracketing and bisection.

    The result satisfies ``|f(r) - y| <= 1e-10 * max(1, y)``; the bisection
    additionally runs until the bracket is tight in r, so round trips hold to
    much better than the residual guarantee.
    """
    if y < 0.0:
        raise KRangeError("inversion target must be nonnegative")
    if f.is_zero:
        if y == 0.0:
            return 0.0
        raise KRangeError("the zero function has no positive values")
    if not at_least(f.classification, Classification.CLASS_K):
        raise KFunError(f"cannot invert a function classified {f.classification.value}")
    if y == 0.0:
        return 0.0
    if f.linear_slope is not None:
        return y / f.linear_slope
    if f.nodes is not None:
        return _invert_piecewise(f, y)

    hi = bracket_hint if bracket_hint and bracket_hint > 0 else max(1.0, y)
    lo = 0.0
    val_hi = _safe_call(f, hi)
    while val_hi is not None and val_hi < y:
        lo = hi
        hi *= 8.0
        if hi > _BRACKET_LIMIT:
            if f.classification is Classification.CLASS_K:
                raise KRangeError(f"{y!r} is above the sampled range of a bounded class-K function")
            raise KFunError(f"bracket for inverse not found within [0, {_BRACKET_LIMIT:g}]")
        val_hi = _safe_call(f, hi)
    if val_hi is None:
        raise KFunError("function not evaluable while bracketing the inverse")

    resid_tol = 1e-10 * max(1.0, y)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = _safe_call(f, mid)
        if v is None:
            raise KFunError("function not evaluable during bisection")
        if v < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    r = 0.5 * (lo + hi)
    if abs(f(r) - y) > resid_tol:
        # Extremely flat region: fall back to the best bracket endpoint.
        for cand in (lo, hi):
            if abs(f(cand) - y) <= resid_tol:
                return cand
        raise KFunError(f"bisection failed to meet residual tolerance at y={y!r}")
    return r


def _invert_piecewise(f: KFun, y: float) -> float:
    xs = [n[0] for n in f.nodes]
    ys = [n[1] for n in f.nodes]
    if y >= ys[-1]:
        tail = max((ys[-1] - ys[-2]) / (xs[-1] - xs[-2]) if len(xs) > 1 else 1.0, 1e-12)
        return xs[-1] + (y - ys[-1]) / tail
    j = bisect_left(ys, y)
    if j == 0:
        return xs[0]
    x0, x1, y0, y1 = xs[j - 1], xs[j], ys[j - 1], ys[j]
    if y1 == y0:
        return x0
    return x0 + (x1 - x0) * (y - y0) / (y1 - y0)


def _safe_call(f: KFun, s: float) -> Optional[float]:
    try:
        v = f(s)
    except ex.EvalDomainError:
        return None
    return v if math.isfinite(v) else float("inf") if v > 0 else None


def pointwise_max(fs: Sequence[KFun], grid: Optional[np.ndarray] = None) -> KFun:
    return _pointwise(fs, grid, maximum=True)


def pointwise_min(fs: Sequence[KFun], grid: Optional[np.ndarray] = None) -> KFun:
    return _pointwise(fs, grid, maximum=False)


def _pointwise(fs: Sequence[KFun], grid, maximum: bool) -> KFun:
    fs = list(fs)
    if not fs:
        raise KFunError("pointwise max/min of an empty list")
    nonzero = [f for f in fs if not f.is_zero]
    if maximum:
        if not nonzero:
            return KFun.zero()
        fs = nonzero
    else:
        if len(nonzero) < len(fs):
            return KFun.zero()  # class-K candidates are nonnegative, so min with 0 is 0
    if len(fs) == 1:
        return fs[0]
    if all(f.expr is not None for f in fs):
        node = ex.Max(tuple(f.expr for f in fs)) if maximum else ex.Min(tuple(f.expr for f in fs))
        return KFun.from_expr(node, grid)
    funcs = tuple(fs)
    if maximum:
        fn = lambda s: max(f(s) for f in funcs)
        label = "max(" + ", ".join(f.describe() for f in funcs) + ")"
    else:
        fn = lambda s: min(f(s) for f in funcs)
        label = "min(" + ", ".join(f.describe() for f in funcs) + ")"
    return KFun.from_callable(fn, label, grid)


def inverse_kfun(f: KFun) -> KFun:
    """Inverse as a new function: exact for linear, bisection-backed otherwise."""
    if f.linear_slope is not None:
        return KFun.linear(1.0 / f.linear_slope)
    if f.nodes is not None:
        xs = [n[0] for n in f.nodes]
        ys = [n[1] for n in f.nodes]
        if ys[0] == 0.0 and all(b > a for a, b in zip(ys, ys[1:])):
            return KFun.piecewise_linear(ys, xs, f"{f.describe()}^-1")
    return KFun.from_callable(lambda y: invert(f, y), f"{f.describe()}^-1")


def require_class(f: KFun, floor: Classification, what: str) -> None:
    if not at_least(f.classification, floor):
        raise KFunError(f"{what} must be {floor.value} or stronger, got {f.classification.value}")


def kfun_to_json(f: KFun, sample_points: Sequence[float] = (0.1, 0.5, 1.0, 2.0, 10.0)) -> dict:
    samples = {}
    for r in sample_points:
        try:
            samples[repr(float(r))] = f(float(r))
        except ex.EvalDomainError:
            samples[repr(float(r))] = None
    out = {
        "description": f.describe(),
        "classification": f.classification.value,
        "samples": samples,
    }
    ident = all(v is not None and abs(v - float(r)) <= 1e-12 * max(1.0, float(r))
                for r, v in zip(sample_points, samples.values()))
    if ident and not f.is_zero:
        out["equals_identity_on_samples"] = True
    return out
