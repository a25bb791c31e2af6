"""Tiny arithmetic language for scalar fields given as config strings.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' factor)?
    base   := number | ident | func '(' expr {',' expr} ')' | '(' expr ')' | '-' factor

Identifiers are the coordinates ``x0 .. x{N-1}`` and the constants ``pi`` and
``e``.  ``^`` is right-associative and binds tighter than unary minus, so
``-2^2`` is -4 and ``exp(-x0^2)`` is a Gaussian; ``2^-1`` is 0.5.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArityError,
    DomainError,
    ExprSyntaxError,
    UnboundVariable,
    UnknownIdentifier,
)

CONSTANTS = {"pi": math.pi, "e": math.e}

# name -> (min args, max args)
FUNCTIONS = {
    "sin": (1, 1),
    "cos": (1, 1),
    "exp": (1, 1),
    "abs": (1, 1),
    "sqrt": (1, 1),
    "tanh": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"x(\d+)$")


# AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Num | Var | Const | Neg | BinOp | Call


# tokenizer / parser -------------------------------------------------------


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.peek()
        if text != value or kind != "op":
            found = text or "end of input"
            raise ExprSyntaxError(f"found {found!r}", pos, expected=repr(value))
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos, expected="operator or end of input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        node = self.base()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.advance()
            node = BinOp("^", node, self.factor())
        return node

    def base(self):
        kind, text, pos = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "op" and text == "-":
            # -a^b is -(a^b), as in ordinary notation
            self.advance()
            return Neg(self.factor())
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            self.advance()
            if text in FUNCTIONS:
                return self.call(text, pos)
            if text in CONSTANTS:
                return Const(text)
            m = _VAR_RE.match(text)
            if m:
                return Var(int(m.group(1)))
            raise UnknownIdentifier(f"unknown identifier {text!r} at position {pos}")
        found = text or "end of input"
        raise ExprSyntaxError(f"found {found!r}", pos, expected="number, identifier, '(' or '-'")

    def call(self, name, pos):
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if hi == lo else f"at least {lo}"
            raise ArityError(f"{name} takes {want} argument(s), got {len(args)} (position {pos})")
        return Call(name, tuple(args))


def parse(text: str) -> Expr:
    """Parse ``text`` into an immutable AST."""
    return _Parser(text).parse()


def to_text(node: Expr) -> str:
    """Fully parenthesized rendering; ``parse(to_text(t)) == t``."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Neg):
        return f"-({to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def max_variable(node: Expr) -> int:
    """Largest coordinate index referenced, or -1."""
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Neg):
        return max_variable(node.operand)
    if isinstance(node, BinOp):
        return max(max_variable(node.left), max_variable(node.right))
    if isinstance(node, Call):
        return max(max_variable(a) for a in node.args)
    return -1


# scalar evaluation ---------------------------------------------------------


def _pow(a, b):
    if a == 0.0 and b < 0:
        raise DomainError("zero raised to a negative power")
    if a < 0 and not float(b).is_integer():
        raise DomainError("negative base with non-integer exponent")
    try:
        return math.pow(a, b)
    except OverflowError as exc:
        raise DomainError("overflow in '^'") from exc


def _apply(name, vals):
    x = vals[0]
    if name == "sqrt":
        if x < 0:
            raise DomainError("sqrt of negative number")
        return math.sqrt(x)
    if name == "exp":
        try:
            return math.exp(x)
        except OverflowError as exc:
            raise DomainError("overflow in exp") from exc
    if name == "min":
        return min(vals)
    if name == "max":
        return max(vals)
    if name == "abs":
        return abs(x)
    return getattr(math, name)(x)


def evaluate(node: Expr, point) -> float:
    """Evaluate at one point of R^N (a sequence of coordinates)."""
    point = tuple(float(v) for v in np.atleast_1d(point))
    return _eval(node, point)


def _eval(node, point):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.index >= len(point):
            raise UnboundVariable(f"x{node.index} is unbound in dimension {len(point)}")
        return point[node.index]
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, point)
    if isinstance(node, BinOp):
        a = _eval(node.left, point)
        b = _eval(node.right, point)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if b == 0.0:
                raise DomainError("division by zero")
            return a / b
        return _pow(a, b)
    return _apply(node.name, [_eval(a, point) for a in node.args])


# vectorized evaluation -----------------------------------------------------


def evaluate_many(node: Expr, points) -> np.ndarray:
    """Evaluate at each row of ``points`` (shape (n, N)); same error rules."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    out = _veval(node, pts)
    return np.broadcast_to(out, (pts.shape[0],)).astype(float, copy=True)


def _veval(node, pts):
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        if node.index >= pts.shape[1]:
            raise UnboundVariable(f"x{node.index} is unbound in dimension {pts.shape[1]}")
        return pts[:, node.index]
    if isinstance(node, Const):
        return np.float64(CONSTANTS[node.name])
    if isinstance(node, Neg):
        return -_veval(node.operand, pts)
    if isinstance(node, BinOp):
        a = _veval(node.left, pts)
        b = _veval(node.right, pts)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0.0):
                raise DomainError("division by zero")
            return a / b
        a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
        if np.any((a == 0.0) & (b < 0)):
            raise DomainError("zero raised to a negative power")
        if np.any((a < 0) & (b != np.floor(b))):
            raise DomainError("negative base with non-integer exponent")
        with np.errstate(over="ignore"):
            out = np.power(a, b)
        if not np.all(np.isfinite(out)):
            raise DomainError("overflow in '^'")
        return out
    vals = [_veval(a, pts) for a in node.args]
    x = vals[0]
    name = node.name
    if name == "sqrt":
        if np.any(np.asarray(x) < 0):
            raise DomainError("sqrt of negative number")
        return np.sqrt(x)
    if name == "exp":
        with np.errstate(over="ignore"):
            out = np.exp(x)
        if not np.all(np.isfinite(out)):
            raise DomainError("overflow in exp")
        return out
    if name == "min":
        out = vals[0]
        for v in vals[1:]:
            out = np.minimum(out, v)
        return out
    if name == "max":
        out = vals[0]
        for v in vals[1:]:
            out = np.maximum(out, v)
        return out
    if name == "abs":
        return np.abs(x)
    return getattr(np, name)(x)


class ScalarField:
    """Callable wrapper around a parsed expression.

    ``field(points)`` accepts an (n, N) array and returns shape (n,);
    ``field.at(point)`` evaluates one point with the scalar evaluator.
    """

    def __init__(self, text_or_expr, dim=None):
        if isinstance(text_or_expr, str):
            self.text = text_or_expr
            self.expr = parse(text_or_expr)
        else:
            self.expr = text_or_expr
            self.text = to_text(text_or_expr)
        self.dim = dim
        if dim is not None and max_variable(self.expr) >= dim:
            raise UnboundVariable(
                f"expression {self.text!r} uses x{max_variable(self.expr)} but N={dim}"
            )

    def __call__(self, points):
        return evaluate_many(self.expr, points)

    def at(self, point):
        return evaluate(self.expr, point)

    def __repr__(self):
        return f"ScalarField({self.text!r})"
