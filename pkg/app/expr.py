"""
Scalar expressions over named real coordinates.

Trees are immutable frozen dataclasses. Evaluation is double precision and
reports domain violations (negative sqrt/log arguments, zero divisors,
overflow) as DomainError instead of propagating NaN, so callers can excise
points that lie off the chart.
"""
from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass
from functools import singledispatch
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence

from .errors import DomainError, ExpressionSyntaxError, UnboundVariable

UNARY_FUNCTIONS = ("sqrt", "exp", "log", "sin", "cos", "sinh", "cosh")
BINARY_OPS = ("add", "sub", "mul", "div")


class Expression:
    """Base node. Arithmetic operators build new trees; they never simplify."""

    def __add__(self, other):
        return Binary("add", self, as_expression(other))

    def __radd__(self, other):
        return Binary("add", as_expression(other), self)

    def __sub__(self, other):
        return Binary("sub", self, as_expression(other))

    def __rsub__(self, other):
        return Binary("sub", as_expression(other), self)

    def __mul__(self, other):
        return Binary("mul", self, as_expression(other))

    def __rmul__(self, other):
        return Binary("mul", as_expression(other), self)

    def __truediv__(self, other):
        return Binary("div", self, as_expression(other))

    def __rtruediv__(self, other):
        return Binary("div", as_expression(other), self)

    def __pow__(self, exponent):
        if isinstance(exponent, Expression):
            folded = fold_constants(exponent)
            if not isinstance(folded, Const):
                raise TypeError("exponents must be constant")
            exponent = folded.value
        return Pow(self, float(exponent))

    def __neg__(self):
        return Unary("neg", self)

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    name: str


@dataclass(frozen=True)
class Unary(Expression):
    op: str
    arg: Expression


@dataclass(frozen=True)
class Binary(Expression):
    op: str
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: float


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, str):
        return Var(value)
    return Const(float(value))


def sqrt(e) -> Expression:
    return Unary("sqrt", as_expression(e))


def exp(e) -> Expression:
    return Unary("exp", as_expression(e))


def log(e) -> Expression:
    return Unary("log", as_expression(e))


def sin(e) -> Expression:
    return Unary("sin", as_expression(e))


def cos(e) -> Expression:
    return Unary("cos", as_expression(e))


def sinh(e) -> Expression:
    return Unary("sinh", as_expression(e))


def cosh(e) -> Expression:
    return Unary("cosh", as_expression(e))


def artanh(e) -> Expression:
    """artanh(u) = log((1 + u) / (1 - u)) / 2, written in the base function set."""
    u = as_expression(e)
    return Const(0.5) * log((ONE + u) / (ONE - u))


def is_zero(e: Expression) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# ---------------------------------------------------------------------------
# evaluation


def _sqrt(x: float) -> float:
    if x < 0.0:
        raise DomainError(f"sqrt of negative argument {x!r}")
    return math.sqrt(x)


def _log(x: float) -> float:
    if x <= 0.0:
        raise DomainError(f"log of non-positive argument {x!r}")
    return math.log(x)


def _guard_overflow(fn: Callable[[float], float], name: str) -> Callable[[float], float]:
    def wrapped(x: float) -> float:
        try:
            return fn(x)
        except OverflowError:
            raise DomainError(f"{name} overflow at {x!r}") from None

    return wrapped


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise DomainError(f"{what} overflow")
    return value


def _add(x: float, y: float) -> float:
    return _finite(x + y, "addition")


def _sub(x: float, y: float) -> float:
    return _finite(x - y, "subtraction")


def _mul(x: float, y: float) -> float:
    return _finite(x * y, "multiplication")


def _div(x: float, y: float) -> float:
    if y == 0.0:
        raise DomainError("division by zero")
    return _finite(x / y, "division")


def _pow(base: float, exponent: float) -> float:
    if base == 0.0 and exponent < 0.0:
        raise DomainError("zero raised to a negative power")
    if base < 0.0 and not float(exponent).is_integer():
        raise DomainError(f"negative base {base!r} with fractional exponent {exponent!r}")
    try:
        return math.pow(base, exponent)
    except OverflowError:
        raise DomainError(f"overflow in {base!r}^{exponent!r}") from None


_UNARY_EVAL: Dict[str, Callable[[float], float]] = {
    "neg": operator.neg,
    "sqrt": _sqrt,
    "exp": _guard_overflow(math.exp, "exp"),
    "log": _log,
    "sin": math.sin,
    "cos": math.cos,
    "sinh": _guard_overflow(math.sinh, "sinh"),
    "cosh": _guard_overflow(math.cosh, "cosh"),
}

_BINARY_EVAL: Dict[str, Callable[[float, float], float]] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
}

Loader = Callable[[str], Callable[[object], float]]


def _compile(node: Expression, load: Loader) -> Callable[[object], float]:
    if isinstance(node, Const):
        value = float(node.value)
        return lambda p: value
    if isinstance(node, Var):
        return load(node.name)
    if isinstance(node, Unary):
        arg = _compile(node.arg, load)
        fn = _UNARY_EVAL[node.op]
        return lambda p: fn(arg(p))
    if isinstance(node, Binary):
        left = _compile(node.left, load)
        right = _compile(node.right, load)
        bfn = _BINARY_EVAL[node.op]
        return lambda p: bfn(left(p), right(p))
    if isinstance(node, Pow):
        base = _compile(node.base, load)
        exponent = float(node.exponent)
        if exponent == 2.0:
            return lambda p: _square(base(p))
        return lambda p: _pow(base(p), exponent)
    raise TypeError(f"not an expression node: {node!r}")


def _square(x: float) -> float:
    return _finite(x * x, "square")


def _mapping_loader(name: str) -> Callable[[object], float]:
    def load(point) -> float:
        try:
            return float(point[name])
        except KeyError:
            raise UnboundVariable(name) from None

    return load


def evaluate(expr: Expression, point: Mapping[str, float]) -> float:
    """Evaluate ``expr`` at a point given as ``{coordinate: value}``."""
    return _compile(expr, _mapping_loader)(point)


def compile_expression(expr: Expression, coords: Sequence[str]) -> Callable[[Sequence[float]], float]:
    """
    Compile ``expr`` into a callable over positional coordinate values.

    Unbound names are reported here, once, rather than on every call.
    """
    index = {name: i for i, name in enumerate(coords)}

    def load(name: str) -> Callable[[object], float]:
        if name not in index:
            raise UnboundVariable(name)
        i = index[name]
        return lambda p: float(p[i])

    return _compile(expr, load)


# ---------------------------------------------------------------------------
# structure


@singledispatch
def variables(expr) -> FrozenSet[str]:
    raise TypeError(f"not an expression node: {expr!r}")


@variables.register
def _(expr: Const) -> FrozenSet[str]:
    return frozenset()


@variables.register
def _(expr: Var) -> FrozenSet[str]:
    return frozenset((expr.name,))


@variables.register
def _(expr: Unary) -> FrozenSet[str]:
    return variables(expr.arg)


@variables.register
def _(expr: Binary) -> FrozenSet[str]:
    return variables(expr.left) | variables(expr.right)


@variables.register
def _(expr: Pow) -> FrozenSet[str]:
    return variables(expr.base)


def substitute(expr: Expression, mapping: Mapping[str, Expression]) -> Expression:
    """Replace variables by expressions (used to compose C with H)."""
    if isinstance(expr, Var):
        return mapping.get(expr.name, expr)
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Unary):
        return Unary(expr.op, substitute(expr.arg, mapping))
    if isinstance(expr, Binary):
        return Binary(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    if isinstance(expr, Pow):
        return Pow(substitute(expr.base, mapping), expr.exponent)
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# constant folding


def _neg(e: Expression) -> Expression:
    if isinstance(e, Const):
        return Const(-e.value)
    if isinstance(e, Unary) and e.op == "neg":
        return e.arg
    return Unary("neg", e)


def _fold_unary(op: str, arg: Expression) -> Expression:
    if op == "neg":
        return _neg(arg)
    if isinstance(arg, Const):
        try:
            return Const(_UNARY_EVAL[op](arg.value))
        except DomainError:
            pass
    return Unary(op, arg)


def _fold_binary(op: str, left: Expression, right: Expression) -> Expression:
    lc = left.value if isinstance(left, Const) else None
    rc = right.value if isinstance(right, Const) else None
    if lc is not None and rc is not None:
        try:
            return Const(_BINARY_EVAL[op](lc, rc))
        except DomainError:
            return Binary(op, left, right)
    if op == "add":
        if lc == 0.0:
            return right
        if rc == 0.0:
            return left
    elif op == "sub":
        if rc == 0.0:
            return left
        if lc == 0.0:
            return _neg(right)
    elif op == "mul":
        if lc == 0.0 or rc == 0.0:
            return ZERO
        if lc == 1.0:
            return right
        if rc == 1.0:
            return left
        if lc == -1.0:
            return _neg(right)
        if rc == -1.0:
            return _neg(left)
    elif op == "div":
        if lc == 0.0:
            return ZERO
        if rc == 1.0:
            return left
        if rc == -1.0:
            return _neg(left)
    return Binary(op, left, right)


def _fold_pow(base: Expression, exponent: float) -> Expression:
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return base
    if isinstance(base, Const):
        try:
            return Const(_pow(base.value, exponent))
        except DomainError:
            pass
    return Pow(base, exponent)


def fold_constants(expr: Expression) -> Expression:
    """Collapse constant subtrees and identity/absorbing elements; idempotent."""
    if isinstance(expr, (Const, Var)):
        return expr
    if isinstance(expr, Unary):
        return _fold_unary(expr.op, fold_constants(expr.arg))
    if isinstance(expr, Binary):
        return _fold_binary(expr.op, fold_constants(expr.left), fold_constants(expr.right))
    if isinstance(expr, Pow):
        return _fold_pow(fold_constants(expr.base), expr.exponent)
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# differentiation


@singledispatch
def _diff(expr, var: str) -> Expression:
    raise TypeError(f"cannot differentiate {type(expr).__name__}")


@_diff.register
def _(expr: Const, var: str) -> Expression:
    return ZERO


@_diff.register
def _(expr: Var, var: str) -> Expression:
    return ONE if expr.name == var else ZERO


@_diff.register
def _(expr: Binary, var: str) -> Expression:
    u, v = expr.left, expr.right
    du, dv = _diff(u, var), _diff(v, var)
    if expr.op in ("add", "sub"):
        return Binary(expr.op, du, dv)
    if expr.op == "mul":
        return Binary("add", Binary("mul", du, v), Binary("mul", u, dv))
    # quotient rule
    return Binary(
        "div",
        Binary("sub", Binary("mul", du, v), Binary("mul", u, dv)),
        Pow(v, 2.0),
    )


@_diff.register
def _(expr: Pow, var: str) -> Expression:
    du = _diff(expr.base, var)
    c = expr.exponent
    return Binary("mul", Binary("mul", Const(c), Pow(expr.base, c - 1.0)), du)


@_diff.register
def _(expr: Unary, var: str) -> Expression:
    u = expr.arg
    du = _diff(u, var)
    if expr.op == "neg":
        return Unary("neg", du)
    if expr.op == "sqrt":
        return Binary("div", du, Binary("mul", Const(2.0), expr))
    if expr.op == "exp":
        return Binary("mul", expr, du)
    if expr.op == "log":
        return Binary("div", du, u)
    if expr.op == "sin":
        return Binary("mul", Unary("cos", u), du)
    if expr.op == "cos":
        return Binary("mul", Unary("neg", Unary("sin", u)), du)
    if expr.op == "sinh":
        return Binary("mul", Unary("cosh", u), du)
    if expr.op == "cosh":
        return Binary("mul", Unary("sinh", u), du)
    raise TypeError(f"unknown function {expr.op}")


def differentiate(expr: Expression, var: str) -> Expression:
    """Exact partial derivative, constant-folded."""
    if var not in variables(expr):
        return ZERO
    return fold_constants(_diff(expr, var))


# ---------------------------------------------------------------------------
# printing

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5

_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def format_number(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _precedence(e: Expression) -> int:
    if isinstance(e, Const):
        return _PREC_NEG if e.value < 0 else _PREC_ATOM
    if isinstance(e, Var):
        return _PREC_ATOM
    if isinstance(e, Unary):
        return _PREC_NEG if e.op == "neg" else _PREC_ATOM
    if isinstance(e, Binary):
        return _PREC_ADD if e.op in ("add", "sub") else _PREC_MUL
    return _PREC_POW


def _wrap(e: Expression, parens: bool) -> str:
    text = to_text(e)
    return f"({text})" if parens else text


def to_text(expr: Expression) -> str:
    """Infix text with the fewest parentheses that parse back to the same text."""
    if isinstance(expr, Const):
        return format_number(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Unary):
        if expr.op == "neg":
            return "-" + _wrap(expr.arg, _precedence(expr.arg) < _PREC_NEG)
        return f"{expr.op}({to_text(expr.arg)})"
    if isinstance(expr, Binary):
        prec = _precedence(expr)
        left = _wrap(expr.left, _precedence(expr.left) < prec)
        right = _wrap(expr.right, _precedence(expr.right) <= prec)
        return f"{left} {_BINARY_SYMBOL[expr.op]} {right}"
    if isinstance(expr, Pow):
        base = _wrap(expr.base, _precedence(expr.base) <= _PREC_POW)
        return f"{base}^{format_number(expr.exponent)}"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(text: str, line: int, column_offset: int) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", line, pos + 1 + column_offset)
        kind = m.lastgroup or "op"
        tokens.append(_Token(kind, m.group(kind), pos + 1 + column_offset))
        pos = m.end()
    tokens.append(_Token("end", "", len(text) + 1 + column_offset))
    return tokens


class _Parser:
    def __init__(self, text: str, line: int, column_offset: int):
        self.tokens = _tokenize(text, line, column_offset)
        self.line = line
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: Optional[_Token] = None) -> ExpressionSyntaxError:
        tok = tok or self.peek()
        if tok.kind == "end":
            message = f"{message} (unexpected end of expression)"
        return ExpressionSyntaxError(message, self.line, tok.column)

    def expect(self, text: str) -> None:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            raise self.error(f"expected '{text}'")
        self.take()

    def parse(self) -> Expression:
        e = self.expression()
        if self.peek().kind != "end":
            raise self.error(f"unexpected token {self.peek().text!r}")
        return e

    def expression(self) -> Expression:
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = "add" if self.take().text == "+" else "sub"
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expression:
        e = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = "mul" if self.take().text == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expression:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            operand = self.unary()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Unary("neg", operand)
        if tok.kind == "op" and tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            tok = self.take()
            exponent = fold_constants(self.unary())
            if not isinstance(exponent, Const):
                raise self.error("exponent must be a constant", tok)
            return Pow(base, exponent.value)
        return base

    def atom(self) -> Expression:
        tok = self.take()
        if tok.kind == "num":
            value = float(tok.text)
            if not math.isfinite(value):
                raise self.error(f"number {tok.text} is out of range", tok)
            return Const(value)
        if tok.kind == "name":
            if self.peek().kind == "op" and self.peek().text == "(":
                if tok.text not in UNARY_FUNCTIONS:
                    raise self.error(f"unknown function '{tok.text}'", tok)
                self.take()
                arg = self.expression()
                self.expect(")")
                return Unary(tok.text, arg)
            if tok.text in UNARY_FUNCTIONS:
                raise self.error(f"function '{tok.text}' needs an argument", tok)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            e = self.expression()
            self.expect(")")
            return e
        raise self.error("expected a number, name or '('", tok)


def parse_expression(text: str, line: int = 1, column_offset: int = 0) -> Expression:
    """
    Parse infix ASCII text: + - * / ^, sqrt exp log sin cos sinh cosh,
    identifiers and parentheses. ``column_offset`` shifts reported columns when
    the text is a slice of a larger line.
    """
    return _Parser(text, line, column_offset).parse()
