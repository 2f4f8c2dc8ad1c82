"""Infix math expressions: tokenizer, Pratt parser, canonical printer, evaluator.

Grammar (precedence from loosest to tightest)::

    expr   := expr ('+' | '-') expr        left-assoc
            | expr ('*' | '/') expr        left-assoc
            | '-' expr                     binds looser than '^'
            | expr '^' expr                right-assoc
            | NUMBER | NAME | NAME '(' expr ')'

Evaluation works on Python floats and on numpy arrays alike, so the
quadrature routines can evaluate an integrand on a whole node batch at once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Node",
    "Expression",
    "ExpressionError",
    "ParseError",
    "EvaluationError",
    "UnboundVariableError",
    "DomainError",
    "NonFiniteError",
    "FUNCTIONS",
    "parse",
    "evaluate",
    "to_source",
    "substitute",
    "variables",
]


class ExpressionError(Exception):
    pass


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int, expected: str | None = None):
        self.offset = offset
        self.expected = expected
        text = f"{message} at offset {offset}"
        if expected:
            text += f" (expected {expected})"
        super().__init__(text)


class EvaluationError(ExpressionError):
    pass


class UnboundVariableError(EvaluationError):
    pass


class DomainError(EvaluationError):
    pass


class NonFiniteError(EvaluationError):
    """Raised when an evaluation overflows or otherwise leaves the finite reals.

    ``sign`` is +1/-1 when every offending value was an infinity of that sign,
    0 otherwise (NaN or mixed).
    """

    def __init__(self, message: str, sign: int = 0):
        self.sign = sign
        super().__init__(message)


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


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


# --- functions -------------------------------------------------------------


def _ln(u):
    if np.any(u <= 0):
        raise DomainError("ln of non-positive argument")
    return np.log(u)


def _sqrt(u):
    if np.any(u < 0):
        raise DomainError("sqrt of negative argument")
    return np.sqrt(u)


FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "ln": _ln,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": _sqrt,
    "abs": np.abs,
    "sign": np.sign,
    "floor": np.floor,
}


def _div(a, b):
    if np.any(b == 0):
        raise DomainError("division by zero")
    return np.divide(a, b)


def _pow(a, b):
    out = np.power(a, b)
    if np.any(np.isnan(out) & ~np.isnan(a) & ~np.isnan(b)):
        raise DomainError("power of negative base with non-integer exponent")
    return out


_BINARY = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _div,
    "^": _pow,
}


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, byte_pos))
        pos = m.end()
        byte_pos += len(text.encode("utf-8"))
    tokens.append(_Token("end", "", byte_pos))
    return tokens


# --- Pratt parser ----------------------------------------------------------

_INFIX_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_PREFIX_NEG_BP = 30


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.peek()
        if tok.text != text or tok.kind == "end":
            raise ParseError(f"unexpected {_describe(tok)}", tok.offset, repr(text))
        self.advance()

    def parse_all(self) -> Node:
        node = self.expression(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {_describe(tok)}", tok.offset, "operator or end of input")
        return node

    def expression(self, rbp: int) -> Node:
        left = self.prefix()
        while True:
            tok = self.peek()
            lbp = _INFIX_BP.get(tok.text, 0) if tok.kind == "op" else 0
            if lbp <= rbp:
                return left
            self.advance()
            # right-assoc for '^': parse the right side at one less binding power
            right = self.expression(lbp - 1 if tok.text == "^" else lbp)
            left = BinOp(tok.text, left, right)

    def prefix(self) -> Node:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            if self.peek().text == "(":
                if tok.text not in FUNCTIONS:
                    raise ParseError(f"unknown function {tok.text!r}", tok.offset)
                self.advance()
                arg = self.expression(0)
                self.expect(")")
                return Call(tok.text, arg)
            return Var(tok.text)
        if tok.text == "-":
            return Neg(self.expression(_PREFIX_NEG_BP))
        if tok.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {_describe(tok)}", tok.offset, "number, name, '-' or '('")


def _describe(tok: _Token) -> str:
    return "end of input" if tok.kind == "end" else f"token {tok.text!r}"


# --- printer ---------------------------------------------------------------


def to_source(node: Node) -> str:
    """Canonical, fully parenthesized text that parses back to an equivalent tree."""
    if isinstance(node, Num):
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 or text.startswith("-") else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# --- compilation to closures -----------------------------------------------


def _compile(node: Node) -> Callable[[Mapping], object]:
    if isinstance(node, Num):
        value = np.float64(node.value)
        return lambda env: value
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(f"unbound variable {name!r}") from None

        return var
    if isinstance(node, Neg):
        inner = _compile(node.operand)
        return lambda env: np.negative(inner(env))
    if isinstance(node, BinOp):
        fn = _BINARY[node.op]
        left, right = _compile(node.left), _compile(node.right)
        return lambda env: fn(left(env), right(env))
    if isinstance(node, Call):
        fn = FUNCTIONS[node.func]
        arg = _compile(node.arg)
        return lambda env: fn(arg(env))
    raise TypeError(f"not an expression node: {node!r}")


def _collect_vars(node: Node, out: set[str]) -> None:
    if isinstance(node, Var):
        out.add(node.name)
    elif isinstance(node, Neg):
        _collect_vars(node.operand, out)
    elif isinstance(node, BinOp):
        _collect_vars(node.left, out)
        _collect_vars(node.right, out)
    elif isinstance(node, Call):
        _collect_vars(node.arg, out)


class Expression:
    """A parsed expression with a cached evaluator.

    Immutable; safe to share across threads. Pickles by tree, the closure is
    rebuilt on load.
    """

    __slots__ = ("tree", "source", "_fn", "_vars")

    def __init__(self, tree: Node, source: str | None = None):
        self.tree = tree
        self.source = source if source is not None else to_source(tree)
        self._fn = _compile(tree)
        acc: set[str] = set()
        _collect_vars(tree, acc)
        self._vars = frozenset(acc)

    def __reduce__(self):
        return (Expression, (self.tree, self.source))

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self) -> int:
        return hash(self.tree)

    @property
    def variables(self) -> frozenset[str]:
        return self._vars

    def __call__(self, **bindings):
        return evaluate(self, bindings)

    def raw(self, bindings: Mapping):
        """Evaluate without the finiteness check (used by hot loops that check themselves)."""
        with np.errstate(all="ignore"):
            return self._fn(bindings)


def parse(source: str) -> Expression:
    if not source or not source.strip():
        raise ParseError("empty expression", 0, "an expression")
    return Expression(_Parser(source).parse_all(), source)


def evaluate(expr: Expression | Node, bindings: Mapping):
    """Evaluate ``expr`` under ``bindings``.

    Returns a float for scalar bindings and an ndarray when any binding is an
    array. Raises NonFiniteError instead of returning inf/nan.
    """
    if not isinstance(expr, Expression):
        expr = Expression(expr)
    with np.errstate(all="ignore"):
        out = expr._fn(bindings)
    out = np.asarray(out, dtype=float)
    finite = np.isfinite(out)
    if not finite.all():
        bad = out[~finite]
        if np.all(bad == np.inf):
            sign = 1
        elif np.all(bad == -np.inf):
            sign = -1
        else:
            sign = 0
        raise NonFiniteError(f"non-finite result evaluating {expr.source!r}", sign)
    if out.ndim == 0:
        return float(out)
    return out


def substitute(expr: Expression, name: str, replacement: Expression | Node) -> Expression:
    """Replace every occurrence of variable ``name`` with ``replacement``."""
    rep = replacement.tree if isinstance(replacement, Expression) else replacement

    def walk(node: Node) -> Node:
        if isinstance(node, Var):
            return rep if node.name == name else node
        if isinstance(node, Neg):
            return Neg(walk(node.operand))
        if isinstance(node, BinOp):
            return BinOp(node.op, walk(node.left), walk(node.right))
        if isinstance(node, Call):
            return Call(node.func, walk(node.arg))
        return node

    return Expression(walk(expr.tree))


def variables(expr: Expression) -> frozenset[str]:
    return expr.variables


def reciprocal(expr: Expression) -> Expression:
    return Expression(BinOp("/", Num(1.0), expr.tree))


def negated(expr: Expression) -> Expression:
    return Expression(Neg(expr.tree))
