"""Scalar field expressions over the base coordinates (x1, x2).

Grammar, loosest binding first::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | x1 | x2 | k1..k9 | FUNC '(' expr ')' | '(' expr ')'

with FUNC one of sin, cos, exp, ln, sqrt, cbrt, abs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Jet
from .errors import ExprSyntaxError, UnboundConstant, UnknownIdentifier

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "cbrt", "abs")
VARIABLES = ("x1", "x2")
CONSTANTS = tuple(f"k{i}" for i in range(1, 10))


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a function name
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Const, Unary, Binary]
ConstEnv = Mapping[str, float]


# -- tokenizer --------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num, name, op, end
    text: str
    offset: int


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos == len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", _byte_offset(source, pos))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), _byte_offset(source, start)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(source, len(source))))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.text == "^":
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.kind == "name":
            self.advance()
            if t.text in FUNCTIONS:
                if self.tok.text != "(":
                    raise ExprSyntaxError(f"function {t.text!r} needs a parenthesized argument", self.tok.offset)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Unary(t.text, arg)
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text in CONSTANTS:
                return Const(t.text)
            raise UnknownIdentifier(f"unknown identifier {t.text!r}", t.offset)
        if t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = t.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", t.offset)


def parse(source: str) -> Expr:
    """Parse expression text into an AST."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


# -- printing ---------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node: Expr) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC["neg"]
    return 5


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def pretty(node: Expr) -> str:
    """Render with the minimal parentheses needed to re-parse the same tree."""
    if isinstance(node, Num):
        text = _format_number(node.value)
        return f"({text})" if node.value < 0 else text
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = pretty(node.arg)
            return f"-({inner})" if _prec(node.arg) < 3 else f"-{inner}"
        return f"{node.op}({pretty(node.arg)})"
    p = _PREC[node.op]
    left, right = pretty(node.left), pretty(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


# -- tree utilities ---------------------------------------------------------


def num(value: float) -> Expr:
    """Literal node; negative values become a negated literal so printing round-trips."""
    value = float(value)
    return Unary("neg", Num(-value)) if value < 0 else Num(value)


def substitute(node: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables (and constants) by the given subtrees."""
    if isinstance(node, (Var, Const)):
        return mapping.get(node.name, node)
    if isinstance(node, Num):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, substitute(node.arg, mapping))
    return Binary(node.op, substitute(node.left, mapping), substitute(node.right, mapping))


def swap_coordinates(node: Expr) -> Expr:
    """The same field with the roles of x1 and x2 exchanged."""
    return substitute(node, {"x1": Var("x2"), "x2": Var("x1")})


def bind_constants(node: Expr, env: ConstEnv) -> Expr:
    """Inline bound constants as literals."""
    return substitute(node, {k: num(v) for k, v in env.items() if k in CONSTANTS})


def free_constants(node: Expr) -> set[str]:
    if isinstance(node, Const):
        return {node.name}
    if isinstance(node, Unary):
        return free_constants(node.arg)
    if isinstance(node, Binary):
        return free_constants(node.left) | free_constants(node.right)
    return set()


# -- evaluation -------------------------------------------------------------

_FUNCS = {
    "neg": lambda a: -a,
    "sin": ad.sin,
    "cos": ad.cos,
    "exp": ad.exp,
    "ln": ad.log,
    "sqrt": ad.sqrt,
    "cbrt": ad.cbrt,
    "abs": ad.fabs,
}


def _is_integer_constant(jet: Jet) -> int | None:
    if jet.order > 0 and np.any(jet.coeffs[..., 1:] != 0):
        return None
    values = np.unique(np.asarray(jet.coeffs[..., 0]))
    if values.size == 1 and float(values[0]).is_integer():
        return int(values[0])
    return None


def eval_expr(node: Expr, env: ConstEnv, x1: Jet, x2: Jet) -> Jet:
    """Jet of the expression with the coordinates replaced by ``x1``, ``x2``."""
    if isinstance(node, Num):
        return Jet.constant(np.full(x1.shape, node.value), x1.order)
    if isinstance(node, Var):
        return x1 if node.name == "x1" else x2
    if isinstance(node, Const):
        if node.name not in env:
            raise UnboundConstant(f"constant {node.name!r} is not bound")
        return Jet.constant(np.full(x1.shape, float(env[node.name])), x1.order)
    if isinstance(node, Unary):
        return _FUNCS[node.op](eval_expr(node.arg, env, x1, x2))
    left = eval_expr(node.left, env, x1, x2)
    right = eval_expr(node.right, env, x1, x2)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left / right
    n = _is_integer_constant(right)
    if n is not None:
        return ad.pow_int(left, n)
    values = np.unique(right.coeffs[..., 0])
    if values.size == 1 and not np.any(right.coeffs[..., 1:]):
        return ad.pow_real(left, float(values[0]))
    return _pow_general(left, right)


def _pow_general(base: Jet, exponent: Jet) -> Jet:
    return ad.exp(ad.log(base) * exponent)


def eval_scalar(node: Expr, env: ConstEnv, x1: float, x2: float) -> float:
    """Plain float evaluation (order-0 jets)."""
    return float(eval_expr(node, env, Jet.constant(x1, 0), Jet.constant(x2, 0)).value)
