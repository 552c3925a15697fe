"""Expression trees for scalar dynamics, guards, gains, and comparison functions.

The grammar (also documented in the README) is a small infix language:

    expr   := ['-'] term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := atom ['^' number]
    atom   := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'

with ``func`` one of ``abs``, ``min``, ``max``, ``exp``, ``log``.  Offsets in
parse errors are 1-based character positions; errors at end of input report
one position past the last character.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence


class ExprError(Exception):
    """Base class for expression failures."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}'", offset)
        self.name = name


class EvalDomainError(ExprError):
    """Division by zero, log of a non-positive value, invalid power, overflow."""


class UnboundVariableError(ExprError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable '{name}'")
        self.name = name


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Sub(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Mul(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Div(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: float


@dataclass(frozen=True)
class Abs(Expr):
    a: Expr


@dataclass(frozen=True)
class Exp(Expr):
    a: Expr


@dataclass(frozen=True)
class Log(Expr):
    a: Expr


@dataclass(frozen=True)
class Min(Expr):
    args: tuple


@dataclass(frozen=True)
class Max(Expr):
    args: tuple


_FUNCTIONS = {"abs", "exp", "log", "min", "max"}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad = len(text) - len(stripped)
            raise ParseError(f"unexpected character '{text[bad]}'", bad + 1)
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num")), m.start("num") + 1))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident") + 1))
        else:
            tokens.append(("op", m.group("op"), m.start("op") + 1))
        pos = m.end()
    tokens.append(("end", None, len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed_vars: Iterable[str]):
        self.tokens = _tokenize(text)
        self.idx = 0
        self.allowed = frozenset(allowed_vars)

    def peek(self):
        return self.tokens[self.idx]

    def advance(self):
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, op: str):
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected '{op}'", offset)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token '{value}'", offset)
        return node

    def expr(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            node: Expr = Sub(Const(0.0), self.term())
        else:
            node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                node = Add(node, rhs) if value == "+" else Sub(node, rhs)
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.factor()
                node = Mul(node, rhs) if value == "*" else Div(node, rhs)
            else:
                return node

    def factor(self) -> Expr:
        node = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            kind, value, offset = self.peek()
            if kind != "num":
                raise ParseError("expected numeric exponent", offset)
            self.advance()
            node = Pow(node, float(value))
        return node

    def atom(self) -> Expr:
        kind, value, offset = self.advance()
        if kind == "num":
            return Const(float(value))
        if kind == "ident":
            if value in _FUNCTIONS:
                self.expect_op("(")
                args = [self.expr()]
                while True:
                    k, v, _ = self.peek()
                    if k == "op" and v == ",":
                        self.advance()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                return _make_call(value, args, offset)
            if value not in self.allowed:
                raise UnknownIdentifierError(value, offset)
            return Var(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        shown = "end of input" if kind == "end" else f"'{value}'"
        raise ParseError(f"expected expression, found {shown}", offset)


def _make_call(name: str, args, offset: int) -> Expr:
    if name in ("abs", "exp", "log") and len(args) != 1:
        raise ParseError(f"{name}() takes exactly one argument", offset)
    if name == "abs":
        return Abs(args[0])
    if name == "exp":
        return Exp(args[0])
    if name == "log":
        return Log(args[0])
    if name == "min":
        return Min(tuple(args))
    return Max(tuple(args))


def parse(text: str, allowed_vars: Iterable[str]) -> Expr:
    """Parse ``text`` into an expression tree over the given variable names."""
    return _Parser(text, allowed_vars).parse()


def free_vars(expr: Expr) -> frozenset:
    if isinstance(expr, Const):
        return frozenset()
    if isinstance(expr, Var):
        return frozenset((expr.name,))
    if isinstance(expr, (Add, Sub, Mul, Div)):
        return free_vars(expr.a) | free_vars(expr.b)
    if isinstance(expr, Pow):
        return free_vars(expr.base)
    if isinstance(expr, (Abs, Exp, Log)):
        return free_vars(expr.a)
    return frozenset().union(*(free_vars(a) for a in expr.args)) if expr.args else frozenset()


def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by subtrees; realizes function composition."""
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Var):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Add):
        return Add(substitute(expr.a, mapping), substitute(expr.b, mapping))
    if isinstance(expr, Sub):
        return Sub(substitute(expr.a, mapping), substitute(expr.b, mapping))
    if isinstance(expr, Mul):
        return Mul(substitute(expr.a, mapping), substitute(expr.b, mapping))
    if isinstance(expr, Div):
        return Div(substitute(expr.a, mapping), substitute(expr.b, mapping))
    if isinstance(expr, Pow):
        return Pow(substitute(expr.base, mapping), expr.exponent)
    if isinstance(expr, Abs):
        return Abs(substitute(expr.a, mapping))
    if isinstance(expr, Exp):
        return Exp(substitute(expr.a, mapping))
    if isinstance(expr, Log):
        return Log(substitute(expr.a, mapping))
    if isinstance(expr, Min):
        return Min(tuple(substitute(a, mapping) for a in expr.args))
    return Max(tuple(substitute(a, mapping) for a in expr.args))


def _pow(base: float, exponent: float) -> float:
    try:
        return math.pow(base, exponent)
    except (ValueError, OverflowError) as exc:
        raise EvalDomainError(f"invalid power {base!r}^{exponent!r}") from exc


def evaluate(expr: Expr, env: Mapping[str, float]) -> float:
    """Evaluate at a full binding of the free variables."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            raise UnboundVariableError(expr.name) from None
    try:
        if isinstance(expr, Add):
            return evaluate(expr.a, env) + evaluate(expr.b, env)
        if isinstance(expr, Sub):
            return evaluate(expr.a, env) - evaluate(expr.b, env)
        if isinstance(expr, Mul):
            return evaluate(expr.a, env) * evaluate(expr.b, env)
        if isinstance(expr, Div):
            denom = evaluate(expr.b, env)
            if denom == 0.0:
                raise EvalDomainError("division by zero")
            return evaluate(expr.a, env) / denom
        if isinstance(expr, Pow):
            return _pow(evaluate(expr.base, env), expr.exponent)
        if isinstance(expr, Abs):
            return abs(evaluate(expr.a, env))
        if isinstance(expr, Exp):
            return math.exp(evaluate(expr.a, env))
        if isinstance(expr, Log):
            v = evaluate(expr.a, env)
            if v <= 0.0:
                raise EvalDomainError(f"log of non-positive value {v!r}")
            return math.log(v)
        if isinstance(expr, Min):
            return min(evaluate(a, env) for a in expr.args)
        if isinstance(expr, Max):
            return max(evaluate(a, env) for a in expr.args)
    except OverflowError as exc:
        raise EvalDomainError("overflow during evaluation") from exc
    raise TypeError(f"unknown node {expr!r}")


def compile_expr(expr: Expr, var_order: Sequence[str]) -> Callable:
    """Compile to a closure over a positional value sequence.

    The returned callable raises the raw arithmetic exceptions
    (ZeroDivisionError, ValueError, OverflowError); hot loops wrap them once.
    """
    index = {name: i for i, name in enumerate(var_order)}
    missing = free_vars(expr) - set(index)
    if missing:
        raise UnboundVariableError(sorted(missing)[0])

    def rec(node):
        if isinstance(node, Const):
            c = node.value
            return lambda vals: c
        if isinstance(node, Var):
            i = index[node.name]
            return lambda vals: vals[i]
        if isinstance(node, Add):
            fa, fb = rec(node.a), rec(node.b)
            return lambda vals: fa(vals) + fb(vals)
        if isinstance(node, Sub):
            fa, fb = rec(node.a), rec(node.b)
            return lambda vals: fa(vals) - fb(vals)
        if isinstance(node, Mul):
            fa, fb = rec(node.a), rec(node.b)
            return lambda vals: fa(vals) * fb(vals)
        if isinstance(node, Div):
            fa, fb = rec(node.a), rec(node.b)
            return lambda vals: fa(vals) / fb(vals)
        if isinstance(node, Pow):
            fb, p = rec(node.base), node.exponent
            return lambda vals: math.pow(fb(vals), p)
        if isinstance(node, Abs):
            fa = rec(node.a)
            return lambda vals: abs(fa(vals))
        if isinstance(node, Exp):
            fa = rec(node.a)
            return lambda vals: math.exp(fa(vals))
        if isinstance(node, Log):
            fa = rec(node.a)
            return lambda vals: math.log(fa(vals))
        if isinstance(node, Min):
            fs = tuple(rec(a) for a in node.args)
            return lambda vals: min(f(vals) for f in fs)
        if isinstance(node, Max):
            fs = tuple(rec(a) for a in node.args)
            return lambda vals: max(f(vals) for f in fs)
        raise TypeError(f"unknown node {node!r}")

    return rec(expr)


_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def render(expr: Expr) -> str:
    """Pretty-print; re-parsing the result is evaluation-preserving."""
    return _render(expr, 0)


def _render(expr: Expr, parent_prec: int) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Sub) and expr.a == Const(0.0):
        text = "-" + _render(expr.b, _PREC_MUL)
        return f"({text})" if parent_prec > _PREC_ADD else text
    if isinstance(expr, (Add, Sub)):
        op = "+" if isinstance(expr, Add) else "-"
        text = f"{_render(expr.a, _PREC_ADD)} {op} {_render(expr.b, _PREC_ADD + 1)}"
        return f"({text})" if parent_prec > _PREC_ADD else text
    if isinstance(expr, (Mul, Div)):
        op = "*" if isinstance(expr, Mul) else "/"
        text = f"{_render(expr.a, _PREC_MUL)}{op}{_render(expr.b, _PREC_MUL + 1)}"
        return f"({text})" if parent_prec > _PREC_MUL else text
    if isinstance(expr, Pow):
        return f"{_render(expr.base, _PREC_ATOM)}^{repr(expr.exponent)}"
    if isinstance(expr, Abs):
        return f"abs({_render(expr.a, 0)})"
    if isinstance(expr, Exp):
        return f"exp({_render(expr.a, 0)})"
    if isinstance(expr, Log):
        return f"log({_render(expr.a, 0)})"
    if isinstance(expr, Min):
        return "min(" + ", ".join(_render(a, 0) for a in expr.args) + ")"
    if isinstance(expr, Max):
        return "max(" + ", ".join(_render(a, 0) for a in expr.args) + ")"
    raise TypeError(f"unknown node {expr!r}")


def directional_bounds(expr: Expr, env: Mapping[str, float],
                       seed: Mapping[str, float], tie_tol: float = 1e-12):
    """Value and directional-derivative bounds along a direction.

    Returns ``(value, lo, hi)`` where ``[lo, hi]`` encloses the inner products
    of the generalized gradient with the direction given by ``seed``.  At
    points where every abs/min/max branch choice is unambiguous the interval
    collapses to the classical chain-rule derivative.
    """
    value, lo, hi = _dbounds(expr, env, seed, tie_tol)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise EvalDomainError("non-finite gradient estimate")
    return value, lo, hi


def _scale(c: float, lo: float, hi: float):
    return (c * lo, c * hi) if c >= 0.0 else (c * hi, c * lo)


def _dbounds(expr: Expr, env, seed, tie_tol):
    if isinstance(expr, Const):
        return expr.value, 0.0, 0.0
    if isinstance(expr, Var):
        d = seed.get(expr.name, 0.0)
        return env[expr.name], d, d
    if isinstance(expr, Add):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        vb, lb, hb = _dbounds(expr.b, env, seed, tie_tol)
        return va + vb, la + lb, ha + hb
    if isinstance(expr, Sub):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        vb, lb, hb = _dbounds(expr.b, env, seed, tie_tol)
        return va - vb, la - hb, ha - lb
    if isinstance(expr, Mul):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        vb, lb, hb = _dbounds(expr.b, env, seed, tie_tol)
        l1, h1 = _scale(vb, la, ha)
        l2, h2 = _scale(va, lb, hb)
        return va * vb, l1 + l2, h1 + h2
    if isinstance(expr, Div):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        vb, lb, hb = _dbounds(expr.b, env, seed, tie_tol)
        if vb == 0.0:
            raise EvalDomainError("division by zero")
        l1, h1 = _scale(1.0 / vb, la, ha)
        l2, h2 = _scale(-va / (vb * vb), lb, hb)
        return va / vb, l1 + l2, h1 + h2
    if isinstance(expr, Pow):
        vb, lb, hb = _dbounds(expr.base, env, seed, tie_tol)
        value = _pow(vb, expr.exponent)
        if expr.exponent == 0.0:
            return value, 0.0, 0.0
        c = expr.exponent * _pow(vb, expr.exponent - 1.0)
        lo, hi = _scale(c, lb, hb)
        return value, lo, hi
    if isinstance(expr, Abs):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        tol = tie_tol * max(1.0, abs(va))
        if va > tol:
            return abs(va), la, ha
        if va < -tol:
            return abs(va), -ha, -la
        return abs(va), min(la, -ha), max(ha, -la)
    if isinstance(expr, Exp):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        try:
            value = math.exp(va)
        except OverflowError as exc:
            raise EvalDomainError("overflow during evaluation") from exc
        lo, hi = _scale(value, la, ha)
        return value, lo, hi
    if isinstance(expr, Log):
        va, la, ha = _dbounds(expr.a, env, seed, tie_tol)
        if va <= 0.0:
            raise EvalDomainError(f"log of non-positive value {va!r}")
        lo, hi = _scale(1.0 / va, la, ha)
        return math.log(va), lo, hi
    if isinstance(expr, (Min, Max)):
        parts = [_dbounds(a, env, seed, tie_tol) for a in expr.args]
        values = [p[0] for p in parts]
        best = max(values) if isinstance(expr, Max) else min(values)
        tol = tie_tol * max(1.0, abs(best))
        active = [p for p in parts if abs(p[0] - best) <= tol]
        return best, min(p[1] for p in active), max(p[2] for p in active)
    raise TypeError(f"unknown node {expr!r}")
