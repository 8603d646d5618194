"""Scalar expressions on R^N with exact first and second derivatives.

Text is parsed by a small recursive-descent parser into an immutable tree.
Evaluation is forward-mode automatic differentiation: every node carries a
:class:`Jet` holding value, gradient and Hessian, vectorised over a batch of
points.  The grammar is described in ``docs/expr-grammar.md``.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    NonFiniteError,
    NonIntegerExponentError,
    ParseError,
    UnknownIdentifierError,
    VariableRangeError,
)

__all__ = [
    "Jet",
    "Jet2",
    "Expression",
    "parse_expression",
    "evaluate_jet2",
    "to_text",
]


# --------------------------------------------------------------------------
# batched second-order jets
# --------------------------------------------------------------------------


class Jet:
    """Value/gradient/Hessian triple over a batch of ``B`` points.

    ``v`` has shape ``(B,)``, ``g`` ``(B, N)`` and ``h`` ``(B, N, N)``; ``h``
    is ``None`` when only first order is requested.  All operations build
    the Hessian from exactly symmetric pieces, so symmetry is preserved bit
    for bit.
    """

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h=None):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def variable(cls, points, i, order=2):
        B, N = points.shape
        g = np.zeros((B, N))
        g[:, i] = 1.0
        h = np.zeros((B, N, N)) if order >= 2 else None
        return cls(points[:, i].copy(), g, h)

    @classmethod
    def constant(cls, c, B, N, order=2):
        h = np.zeros((B, N, N)) if order >= 2 else None
        return cls(np.full(B, float(c)), np.zeros((B, N)), h)

    @property
    def order(self):
        return 1 if self.h is None else 2

    # arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            h = None if self.h is None else self.h + other.h
            return Jet(self.v + other.v, self.g + other.g, h)
        return Jet(self.v + other, self.g, self.h)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g, None if self.h is None else -self.h)

    def __sub__(self, other):
        if isinstance(other, Jet):
            h = None if self.h is None else self.h - other.h
            return Jet(self.v - other.v, self.g - other.g, h)
        return Jet(self.v - other, self.g, self.h)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = float(other)
            return Jet(self.v * c, self.g * c, None if self.h is None else self.h * c)
        a, b = self, other
        v = a.v * b.v
        g = a.g * b.v[:, None] + b.g * a.v[:, None]
        h = None
        if a.h is not None:
            cross = a.g[:, :, None] * b.g[:, None, :]
            h = (
                a.h * b.v[:, None, None]
                + b.h * a.v[:, None, None]
                + (cross + np.swapaxes(cross, 1, 2))
            )
        return Jet(v, g, h)

    __rmul__ = __mul__

    def apply(self, f0, f1, f2):
        """Compose with a scalar function given its value and two derivatives."""
        g = self.g * f1[:, None]
        h = None
        if self.h is not None:
            h = self.h * f1[:, None, None] + f2[:, None, None] * (
                self.g[:, :, None] * self.g[:, None, :]
            )
        return Jet(f0, g, h)

    def reciprocal(self):
        u = self.v
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            inv = 1.0 / u
            return self.apply(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / float(other))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def ipow(self, n):
        """Integer power by repeated multiplication."""
        if n == 0:
            return Jet.constant(1.0, *self.g.shape, order=self.order)
        base = self if n > 0 else self.reciprocal()
        out = base
        for _ in range(abs(n) - 1):
            out = out * base
        return out

    def sin(self):
        s, c = np.sin(self.v), np.cos(self.v)
        return self.apply(s, c, -s)

    def cos(self):
        s, c = np.sin(self.v), np.cos(self.v)
        return self.apply(c, -s, -c)

    def exp(self):
        with np.errstate(over="ignore"):
            e = np.exp(self.v)
        return self.apply(e, e, e)

    def sqrt(self):
        if np.any(self.v < 0.0):
            raise DomainError("sqrt of a negative argument")
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.sqrt(self.v)
            d1 = 0.5 / r
            d2 = -0.25 / (r * self.v)
        return self.apply(r, d1, d2)

    def is_finite(self):
        ok = np.isfinite(self.v).all() and np.isfinite(self.g).all()
        if self.h is not None:
            ok = ok and np.isfinite(self.h).all()
        return bool(ok)


@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of a scalar function at one point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


# --------------------------------------------------------------------------
# syntax tree
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, as written


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


FUNCTIONS = ("sin", "cos", "exp", "sqrt")

_BINARY = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
}


def _eval(node, points, order):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return Jet.variable(points, node.index - 1, order)
    if isinstance(node, Neg):
        return -_eval(node.arg, points, order)
    if isinstance(node, BinOp):
        a = _eval(node.left, points, order)
        b = _eval(node.right, points, order)
        return _BINARY[node.op](a, b)
    if isinstance(node, Pow):
        a = _eval(node.base, points, order)
        if not isinstance(a, Jet):
            return float(a) ** node.exponent
        return a.ipow(node.exponent)
    if isinstance(node, Call):
        a = _eval(node.arg, points, order)
        if not isinstance(a, Jet):
            a = Jet.constant(a, *points.shape, order=order)
        return getattr(a, node.func)()
    raise TypeError(f"unknown node {node!r}")


class Expression:
    """Immutable parsed expression over ``x1 .. xN``.

    Besides the tree this carries the declared ambient dimension, and it
    implements the smooth-function protocol used throughout the package:
    :meth:`jet` evaluates value, gradient and (optionally) Hessian on a
    batch of points.
    """

    __slots__ = ("root", "ambient_dim", "text")

    def __init__(self, root, ambient_dim, text=None):
        self.root = root
        self.ambient_dim = ambient_dim
        self.text = text if text is not None else to_text(root)

    def __repr__(self):
        return f"Expression({self.text!r}, {self.ambient_dim})"

    def __str__(self):
        return self.text

    def jet(self, points, order=2):
        """Return ``(value, gradient, hessian)`` for points of shape (B, N)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.ambient_dim:
            raise ValueError(
                f"expected points of shape (B, {self.ambient_dim}), got {points.shape}"
            )
        with np.errstate(over="ignore", invalid="ignore"):
            out = _eval(self.root, points, order)
        if not isinstance(out, Jet):
            out = Jet.constant(out, *points.shape, order=order)
        if not out.is_finite():
            raise NonFiniteError(f"non-finite derivative data evaluating {self.text}")
        return out.v, out.g, out.h

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.jet(points, order=1)[0]


def to_text(node):
    """Print a tree in a form :func:`parse_expression` reads back exactly."""
    if isinstance(node, Num):
        s = repr(float(node.value))
        return f"({s})" if node.value < 0 or "e" in s or "inf" in s else s
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)}{node.op}{to_text(node.right)})"
    if isinstance(node, Pow):
        return f"({to_text(node.base)}^{node.exponent})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    raise TypeError(f"unknown node {node!r}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte(text, pos):
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text, ambient_dim):
        self.text = text
        self.n = ambient_dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None, cls=ParseError):
        tok = tok or self.peek()
        return cls(message, _byte(self.text, tok[2]))

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] == "end":
            want = "end of input" if value == "" else repr(value)
            got = "end of input" if tok[0] == "end" else repr(tok[1])
            raise self.error(f"expected {want}, found {got}")
        return self.take()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[1] == "^":
            self.take()
            node = Pow(node, self.exponent())
        return node

    def exponent(self):
        paren = self.peek()[1] == "("
        if paren:
            self.take()
        sign = 1
        if self.peek()[1] in ("-", "+"):
            sign = -1 if self.take()[1] == "-" else 1
        tok = self.peek()
        if tok[0] == "end":
            raise self.error("expected integer exponent, found end of input")
        if tok[0] != "num" or not tok[1].isdigit():
            raise self.error(
                f"exponent must be an integer literal, found {tok[1]!r}",
                cls=NonIntegerExponentError,
            )
        self.take()
        if paren:
            self.expect(")")
        return sign * int(tok[1])

    def atom(self):
        tok = self.peek()
        kind, value, _ = tok
        if kind == "num":
            self.take()
            return Num(float(value))
        if kind == "ident":
            self.take()
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            m = re.fullmatch(r"x([0-9]+)", value)
            if m is None:
                raise self.error(f"unknown identifier {value!r}", tok, UnknownIdentifierError)
            idx = int(m.group(1))
            if not 1 <= idx <= self.n:
                raise self.error(
                    f"variable {value} outside x1..x{self.n}", tok, VariableRangeError
                )
            return Var(idx)
        if value == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected token {value!r}")


def parse_expression(text, ambient_dim):
    """Parse ``text`` into an :class:`Expression` over ``x1 .. x{ambient_dim}``.

    Precedence from tightest: ``^`` (integer literal exponents only), unary
    minus, ``*``/``/``, ``+``/``-``; binary operators associate to the left.

    >>> parse_expression("x1*x2", 2).jet([[2.0, 3.0]])[0]
    array([6.])
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", 0)
    if ambient_dim < 1:
        raise ValueError("ambient_dim must be positive")
    root = _Parser(text, ambient_dim).parse()
    return Expression(root, ambient_dim, text)


def evaluate_jet2(e, p):
    """Value, gradient and Hessian of ``e`` at the single point ``p``."""
    p = np.asarray(p, dtype=float).reshape(1, -1)
    v, g, h = e.jet(p, order=2)
    return Jet2(float(v[0]), g[0].copy(), h[0].copy())
