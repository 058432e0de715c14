"""Small infix expression language with exact symbolic first derivatives.

Grammar (whitespace is insignificant)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus and is right-associative, so ``-2^2``
is ``-(2^2)`` and ``a^b^c`` is ``a^(b^c)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "tanh", "log")
DEFAULT_VARIABLES = ("t", "x")
# spellings accepted for the gauge parameter
ALIASES = {"λ": "lam", "lambda": "lam"}


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    """Syntax error carrying the UTF-8 byte offset and the expected tokens."""

    def __init__(self, source: str, offset: int, expected: tuple[str, ...], found: str):
        self.source = source
        self.offset = offset
        self.expected = expected
        self.found = found
        super().__init__(
            f"syntax error at byte {offset}: expected one of {', '.join(expected)}; found {found}"
        )


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int, allowed: tuple[str, ...]):
        self.name = name
        self.offset = offset
        super().__init__(
            f"unknown identifier {name!r} at byte {offset}; "
            f"variables are {', '.join(allowed)}, functions are {', '.join(FUNCTIONS)}"
        )


class EvalError(ExprError):
    """Non-finite value or division by zero during evaluation."""


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

ZERO = Num(0.0)
ONE = Num(1.0)


# --- tokenizer and parser --------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[^\W\d]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    while True:
        m = _TOKEN.match(source, pos)
        if m is None:
            rest = source[pos:]
            stripped = rest.lstrip()
            if not stripped:
                break
            at = pos + len(rest) - len(stripped)
            raise ParseError(source, len(source[:at].encode()), ("number", "identifier", "operator"),
                             repr(stripped[0]))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), len(source[:start].encode())))
        pos = m.end()
    toks.append(_Tok("end", "", len(source.encode())))
    return toks


class _Parser:
    def __init__(self, source: str, variables: tuple[str, ...]):
        self.source = source
        self.variables = variables
        self.toks = _tokenize(source)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: tuple[str, ...]):
        tok = self.peek()
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ParseError(self.source, tok.offset, expected, found)

    def expect(self, text: str):
        if self.peek().text != text or self.peek().kind != "op":
            self.fail((repr(text),))
        self.i += 1

    def parse(self) -> Node:
        node = self.expr()
        if self.peek().kind != "end":
            self.fail(("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.peek().text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.peek().text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.i += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.i += 1
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            name = ALIASES.get(tok.text, tok.text)
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            if name not in self.variables:
                raise UnknownIdentifierError(tok.text, tok.offset, self.variables)
            return Var(name)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        self.fail(("number", "identifier", "'('", "'-'"))


def parse_expr(source: str, variables: tuple[str, ...] = DEFAULT_VARIABLES) -> Node:
    """Parse ``source`` into an AST over the given variable names."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source, tuple(variables)).parse()


# --- printing --------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg) or (isinstance(node, Num) and node.value < 0):
        return 3
    return 5


def to_source(node: Node) -> str:
    """Print with the minimal parentheses that re-parse to the same tree."""

    def wrap(child: Node, minimum: int) -> str:
        text = to_source(child)
        return f"({text})" if _prec(child) < minimum else text

    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + wrap(node.arg, 3)
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if node.op in "+-":
        return f"{wrap(node.left, 1)} {node.op} {wrap(node.right, 2)}"
    if node.op in "*/":
        return f"{wrap(node.left, 2)} {node.op} {wrap(node.right, 3)}"
    return f"{wrap(node.left, 5)}^{wrap(node.right, 3)}"


# --- construction helpers with light constant folding ----------------------


def add(a: Node, b: Node) -> Node:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Node, b: Node) -> Node:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def neg(a: Node) -> Node:
    if a == ZERO:
        return ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def free_variables(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, (Neg, Call)):
        return free_variables(node.arg)
    return free_variables(node.left) | free_variables(node.right)


@lru_cache(maxsize=4096)
def diff(node: Node, var: str) -> Node:
    """Exact symbolic partial derivative of ``node`` with respect to ``var``."""
    if isinstance(node, Num):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if isinstance(node, Neg):
        return neg(diff(node.arg, var))
    if isinstance(node, Call):
        a = node.arg
        da = diff(a, var)
        if da == ZERO:
            return ZERO
        if node.func == "sin":
            outer = Call("cos", a)
        elif node.func == "cos":
            outer = neg(Call("sin", a))
        elif node.func == "exp":
            outer = node
        elif node.func == "tanh":
            outer = sub(ONE, BinOp("^", node, Num(2.0)))
        else:
            return div(da, a)
        return mul(outer, da)
    a, b = node.left, node.right
    da, db = diff(a, var), diff(b, var)
    if node.op == "+":
        return add(da, db)
    if node.op == "-":
        return sub(da, db)
    if node.op == "*":
        return add(mul(da, b), mul(a, db))
    if node.op == "/":
        return div(sub(mul(da, b), mul(a, db)), BinOp("^", b, Num(2.0)))
    # power
    if db == ZERO:
        if da == ZERO:
            return ZERO
        if isinstance(b, Num):
            lowered = BinOp("^", a, Num(b.value - 1.0))
        else:
            lowered = BinOp("^", a, sub(b, ONE))
        return mul(mul(b, lowered), da)
    # a^b = exp(b log a) for a > 0
    return mul(node, add(mul(db, Call("log", a)), div(mul(b, da), a)))


# --- evaluation ------------------------------------------------------------

_UFUNC = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh, "log": np.log}


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        if node.func == "log" and np.any(np.asarray(arg) <= 0):
            raise EvalError("log of a non-positive value")
        return _UFUNC[node.func](arg)
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvalError("division by zero")
        return a / b
    return np.power(np.asarray(a, dtype=float), b)


def evaluate(node: Node, **env) -> np.ndarray:
    """Vectorized evaluation; variables are passed as keyword arrays."""
    arrays = [np.asarray(v, dtype=float) for v in env.values()]
    shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
    try:
        with np.errstate(all="raise", under="ignore"):
            out = _eval(node, {k: np.asarray(v, dtype=float) for k, v in env.items()})
    except FloatingPointError as exc:
        raise EvalError(f"floating point error in {to_source(node)}: {exc}") from None
    except KeyError as exc:
        raise EvalError(f"no value supplied for variable {exc.args[0]}") from None
    out = np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
    if not np.all(np.isfinite(out)):
        raise EvalError(f"non-finite value in {to_source(node)}")
    return out


def eval_with_grad(e: Node, t, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value and exact partials (d/dt, d/dx) of an expression in (t, x)."""
    return (
        evaluate(e, t=t, x=x),
        evaluate(diff(e, "t"), t=t, x=x),
        evaluate(diff(e, "x"), t=t, x=x),
    )


def constant_value(node: Node) -> float | None:
    if free_variables(node):
        return None
    return float(evaluate(node))
