"""Arithmetic expression language for model definitions.

Drift fields, transition rates and noise amplitudes in model configs are
given as expression strings over the reserved variable ``x`` and named
constants (parameters).  The grammar is a conventional infix calculator:

    expr   := term  (("+" | "-") term)*          left associative
    term   := unary (("*" | "/") unary)*         left associative
    unary  := "-" unary | power
    power  := atom ("^" unary)?                  right associative
    atom   := NUMBER | NAME | NAME "(" args ")" | "(" expr ")"

``^`` binds tighter than unary minus, so ``-x^2`` means ``-(x^2)``.
Available functions: exp, log, sqrt, tanh, abs (one argument) and
min, max (two arguments).  There are no user-defined functions and no
symbolic differentiation; derivatives are taken elsewhere by finite
differences.

ASTs are immutable after parsing and evaluation is pure, so parsed
expressions can be shared freely across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "ExprEvalError",
    "Num",
    "Var",
    "Neg",
    "Bin",
    "Call",
    "ExprAst",
    "FUNCTIONS",
    "parse",
    "evaluate",
    "to_source",
    "variables",
    "compile_fn",
]


class ExprError(ValueError):
    """Base class for expression language failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprEvalError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (expression offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "ExprAst"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "ExprAst"
    right: "ExprAst"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["ExprAst", ...]
    pos: int = field(default=0, compare=False)


ExprAst = Union[Num, Var, Neg, Bin, Call]

#: function name -> arity
FUNCTIONS: dict[str, int] = {
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "tanh": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
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

_BINARY_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_RBP = 25  # between mul/div and pow


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | one of "+-*/^()," | "end"
    text: str
    pos: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[i]!r}", i)
        if m.lastgroup == "num":
            tokens.append(_Token("num", m.group(), i))
        elif m.lastgroup == "name":
            tokens.append(_Token("name", m.group(), i))
        elif m.lastgroup == "op":
            tokens.append(_Token(m.group(), m.group(), i))
        i = m.end()
    tokens.append(_Token("end", "", len(src)))
    return tokens


class _Parser:
    """Precedence-climbing (Pratt) parser over the token list."""

    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, kind: str, what: str) -> _Token:
        if self.tok.kind != kind:
            raise ExprSyntaxError(
                f"expected {what}, found {self.tok.text or 'end of input'!r}",
                self.tok.pos,
            )
        return self.advance()

    def expression(self, rbp: int = 0) -> ExprAst:
        left = self.prefix()
        while self.tok.kind in _BINARY_LBP and rbp < _BINARY_LBP[self.tok.kind]:
            op = self.advance()
            # right-associative ^ reparses at lbp-1 so a^b^c groups rightward
            next_rbp = _BINARY_LBP[op.kind] - (1 if op.kind == "^" else 0)
            right = self.expression(next_rbp)
            left = Bin(op.kind, left, right, pos=op.pos)
        return left

    def prefix(self) -> ExprAst:
        t = self.advance()
        if t.kind == "num":
            return Num(float(t.text), pos=t.pos)
        if t.kind == "-":
            return Neg(self.expression(_UNARY_RBP), pos=t.pos)
        if t.kind == "(":
            inner = self.expression(0)
            self.expect(")", "')'")
            return inner
        if t.kind == "name":
            if self.tok.kind != "(":
                return Var(t.text, pos=t.pos)
            if t.text not in FUNCTIONS:
                raise ExprSyntaxError(f"unknown function {t.text!r}", t.pos)
            self.advance()  # consume "("
            args = [self.expression(0)]
            while self.tok.kind == ",":
                self.advance()
                args.append(self.expression(0))
            self.expect(")", "')' or ','")
            arity = FUNCTIONS[t.text]
            if len(args) != arity:
                raise ExprSyntaxError(
                    f"{t.text} takes {arity} argument(s), got {len(args)}", t.pos
                )
            return Call(t.text, tuple(args), pos=t.pos)
        raise ExprSyntaxError(
            f"expected a number, name, '-' or '(', found {t.text or 'end of input'!r}",
            t.pos,
        )


def parse(src: str) -> ExprAst:
    """Parse ``src`` into an AST, raising :class:`ExprSyntaxError` with a
    byte offset on malformed input."""
    parser = _Parser(_tokenize(src))
    ast = parser.expression(0)
    if parser.tok.kind != "end":
        raise ExprSyntaxError(
            f"unexpected trailing input {parser.tok.text!r}", parser.tok.pos
        )
    return ast


def variables(ast: ExprAst) -> set[str]:
    """All variable names referenced by the expression."""
    out: set[str] = set()
    stack = [ast]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, Bin):
            stack.extend((node.left, node.right))
        elif isinstance(node, Call):
            stack.extend(node.args)
    return out


def _pow(a: float, b: float) -> float:
    # math.pow rejects negative**fractional instead of returning complex
    return math.pow(a, b)


_SCALAR_FNS: dict[str, Callable] = {
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "tanh": math.tanh,
    "abs": abs,
    "min": min,
    "max": max,
}

_ARRAY_FNS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}


def evaluate(ast: ExprAst, x: float, params: Mapping[str, float] | None = None) -> float:
    """Evaluate at scalar ``x`` in IEEE double arithmetic.

    Raises :class:`ExprEvalError` (with the offending node's source offset)
    on unbound variables and on non-finite intermediate results such as
    division by zero or log of a non-positive number.
    """
    params = params or {}

    def go(node: ExprAst) -> float:
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Var):
            if node.name == "x":
                return float(x)
            try:
                return float(params[node.name])
            except KeyError:
                raise ExprEvalError(f"unbound variable {node.name!r}", node.pos) from None
        if isinstance(node, Neg):
            return -go(node.operand)
        if isinstance(node, Bin):
            a = go(node.left)
            b = go(node.right)
            try:
                if node.op == "+":
                    v = a + b
                elif node.op == "-":
                    v = a - b
                elif node.op == "*":
                    v = a * b
                elif node.op == "/":
                    v = a / b
                else:
                    v = _pow(a, b)
            except (ZeroDivisionError, OverflowError, ValueError) as e:
                raise ExprEvalError(f"'{node.op}' failed: {e}", node.pos) from None
            if not math.isfinite(v):
                raise ExprEvalError(f"'{node.op}' produced a non-finite value", node.pos)
            return v
        # Call
        try:
            v = _SCALAR_FNS[node.fn](*(go(a) for a in node.args))
        except (ZeroDivisionError, OverflowError, ValueError) as e:
            raise ExprEvalError(f"{node.fn} failed: {e}", node.pos) from None
        if not math.isfinite(v):
            raise ExprEvalError(f"{node.fn} produced a non-finite value", node.pos)
        return float(v)

    return go(ast)


# precedence levels for printing; atoms above everything
_PREC = {"+": 10, "-": 10, "*": 20, "/": 20, "neg": _UNARY_RBP, "^": 30, "atom": 100}


def _node_prec(node: ExprAst) -> int:
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def to_source(ast: ExprAst) -> str:
    """Render the AST back to source text with minimal parentheses.

    Reparsing the result yields a structurally identical AST.
    """
    if isinstance(ast, Num):
        return repr(ast.value)
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Neg):
        inner = to_source(ast.operand)
        if _node_prec(ast.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(ast, Call):
        return f"{ast.fn}({', '.join(to_source(a) for a in ast.args)})"
    p = _PREC[ast.op]
    left = to_source(ast.left)
    right = to_source(ast.right)
    lp = _node_prec(ast.left)
    rp = _node_prec(ast.right)
    if ast.op == "^":
        # right associative: (a^b)^c needs parens on the left
        if lp <= p:
            left = f"({left})"
        if rp < p:
            right = f"({right})"
    else:
        if lp < p:
            left = f"({left})"
        if rp <= p:
            right = f"({right})"
    return f"{left} {ast.op} {right}" if ast.op in "+-" else f"{left}{ast.op}{right}"


def _codegen(node: ExprAst, params: Mapping[str, float]) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        if node.name == "x":
            return "x"
        try:
            return repr(float(params[node.name]))
        except KeyError:
            raise ExprEvalError(f"unbound variable {node.name!r}", node.pos) from None
    if isinstance(node, Neg):
        return f"(-{_codegen(node.operand, params)})"
    if isinstance(node, Bin):
        a = _codegen(node.left, params)
        b = _codegen(node.right, params)
        if node.op == "^":
            return f"_pow({a}, {b})"
        return f"({a} {node.op} {b})"
    args = ", ".join(_codegen(a, params) for a in node.args)
    return f"_{node.fn}({args})"


def compile_fn(
    ast: ExprAst,
    params: Mapping[str, float] | None = None,
    array: bool = False,
) -> Callable:
    """Compile the AST to a fast single-argument callable ``f(x)``.

    Parameter values are baked in as literals.  The scalar variant raises
    :class:`ExprEvalError` on non-finite results; the ``array`` variant maps
    numpy arrays elementwise and leaves finiteness checks to the caller.
    Agrees with :func:`evaluate` wherever the latter succeeds.
    """
    params = params or {}
    src = f"lambda x: {_codegen(ast, params)}"
    fns = _ARRAY_FNS if array else _SCALAR_FNS
    ns = {"__builtins__": {}, "_pow": (np.power if array else _pow)}
    ns.update({f"_{name}": fn for name, fn in fns.items()})
    raw = eval(compile(src, "<expr>", "eval"), ns)  # noqa: S307 - generated from our AST
    if array:
        def call_array(x):
            with np.errstate(all="ignore"):
                v = raw(x)
            return np.broadcast_to(np.asarray(v, dtype=float), np.shape(x)).copy() \
                if np.shape(v) != np.shape(x) else v
        return call_array

    def call(x: float) -> float:
        try:
            v = raw(x)
        except (ZeroDivisionError, OverflowError, ValueError) as e:
            raise ExprEvalError(f"evaluation failed: {e}", getattr(ast, "pos", 0)) from None
        if not math.isfinite(v):
            raise ExprEvalError("non-finite value", getattr(ast, "pos", 0))
        return v

    return call
