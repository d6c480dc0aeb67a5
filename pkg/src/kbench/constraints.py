"""Constraint expressions attached to kernel definitions.

A constraint is one comparison over integer axis values and integer-dtype
input tensors, e.g.::

    len_indptr == batch_size + 1
    num_kv_indices == kv_indptr[-1].item()

Grammar (integers are arbitrary-precision)::

    constraint := sum ('==' | '<=' | '>=' | '<' | '>') sum
    sum        := term (('+' | '-') term)*
    term       := unary (('*' | '//') unary)*
    unary      := '-' unary | atom
    atom       := INT
                | NAME                      -- an axis value
                | NAME '[' unary ']' suffix -- one element of an int tensor
    suffix     := '.item()' | <nothing>     -- normalized away

Indexing follows python semantics: negative indices count from the end, and
only rank-1 tensors are indexable.  Evaluation is total over bound inputs —
every failure mode is a typed error (UnboundName, NonIntegerTensorIndexed,
IndexOutOfRange), and a division by zero counts as a violated constraint
rather than a crash.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import (
    ConstraintGrammarError,
    ConstraintViolated,
    IndexOutOfRange,
    NonIntegerTensorIndexed,
    UnboundName,
)

# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Axis:
    name: str


@dataclass(frozen=True)
class Index:
    name: str
    index: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*', '//'
    left: "Expr"
    right: "Expr"


Expr = Union[Lit, Axis, Index, Neg, BinOp]


@dataclass(frozen=True)
class Compare:
    op: str  # '==', '<=', '>=', '<', '>'
    left: Expr
    right: Expr


@dataclass(frozen=True)
class ConstraintExpr:
    """A parsed constraint; ``text`` is kept verbatim for serialization."""

    text: str
    root: Compare


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<int>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<item>\.item\(\))"
    r"|(?P<op>==|<=|>=|//|[-+*<>\[\]]))"
)

_CMP_OPS = ("==", "<=", ">=", "<", ">")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ConstraintGrammarError(text, f"unexpected character {stripped[0]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise ConstraintGrammarError(self.text, "unexpected end of expression", len(self.text))
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        tok = self.take()
        if tok[0] != "op" or tok[1] != op:
            raise ConstraintGrammarError(self.text, f"expected {op!r}, got {tok[1]!r}", tok[2])

    def parse(self) -> Compare:
        left = self.sum()
        tok = self.take()
        if tok[0] != "op" or tok[1] not in _CMP_OPS:
            raise ConstraintGrammarError(
                self.text, f"expected a comparison operator, got {tok[1]!r}", tok[2]
            )
        right = self.sum()
        trailing = self.peek()
        if trailing is not None:
            raise ConstraintGrammarError(
                self.text, f"trailing input {trailing[1]!r}", trailing[2]
            )
        return Compare(tok[1], left, right)

    def sum(self) -> Expr:
        node = self.term()
        while True:
            tok = self.peek()
            if tok and tok[0] == "op" and tok[1] in ("+", "-"):
                self.pos += 1
                node = BinOp(tok[1], node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.unary()
        while True:
            tok = self.peek()
            if tok and tok[0] == "op" and tok[1] in ("*", "//"):
                self.pos += 1
                node = BinOp(tok[1], node, self.unary())
            else:
                return node

    def unary(self) -> Expr:
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "-":
            self.pos += 1
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.take()
        if tok[0] == "int":
            return Lit(int(tok[1]))
        if tok[0] == "name":
            name = tok[1]
            nxt = self.peek()
            if nxt and nxt[0] == "op" and nxt[1] == "[":
                self.pos += 1
                index = self.unary()
                self.expect_op("]")
                after = self.peek()
                if after and after[0] == "item":
                    self.pos += 1
                return Index(name, index)
            return Axis(name)
        raise ConstraintGrammarError(self.text, f"unexpected token {tok[1]!r}", tok[2])


def parse_constraint(text: str) -> ConstraintExpr:
    if not isinstance(text, str) or not text.strip():
        raise ConstraintGrammarError(str(text), "empty constraint")
    return ConstraintExpr(text, _Parser(text).parse())


# ---------------------------------------------------------------------------
# Analysis / evaluation
# ---------------------------------------------------------------------------


def references(expr: ConstraintExpr) -> tuple[set[str], set[str]]:
    """Names referenced by the constraint: (bare axis names, indexed tensors)."""
    axes: set[str] = set()
    tensors: set[str] = set()

    def walk(node: Expr) -> None:
        if isinstance(node, Axis):
            axes.add(node.name)
        elif isinstance(node, Index):
            tensors.add(node.name)
            walk(node.index)
        elif isinstance(node, Neg):
            walk(node.operand)
        elif isinstance(node, BinOp):
            walk(node.left)
            walk(node.right)

    walk(expr.root.left)
    walk(expr.root.right)
    return axes, tensors


def needs_tensors(expr: ConstraintExpr) -> bool:
    """True when evaluation requires materialized inputs (tensor indexing)."""
    return bool(references(expr)[1])


def _eval(node: Expr, text: str, axes: Mapping[str, int], tensors: Mapping[str, np.ndarray]) -> int:
    if isinstance(node, Lit):
        return node.value
    if isinstance(node, Neg):
        return -_eval(node.operand, text, axes, tensors)
    if isinstance(node, Axis):
        if node.name in axes:
            return int(axes[node.name])
        hint = " (tensors may only be used with an index)" if node.name in tensors else ""
        raise UnboundName(f"{text!r}: unknown axis {node.name!r}{hint}")
    if isinstance(node, Index):
        if node.name not in tensors:
            raise UnboundName(f"{text!r}: unknown tensor {node.name!r}")
        arr = np.asarray(tensors[node.name])
        if not np.issubdtype(arr.dtype, np.integer):
            raise NonIntegerTensorIndexed(
                f"{text!r}: {node.name!r} has dtype {arr.dtype}, not an integer type"
            )
        if arr.ndim != 1:
            raise IndexOutOfRange(
                f"{text!r}: {node.name!r} has rank {arr.ndim}; only vectors are indexable"
            )
        idx = _eval(node.index, text, axes, tensors)
        if not (-arr.shape[0] <= idx < arr.shape[0]):
            raise IndexOutOfRange(
                f"{text!r}: index {idx} out of range for {node.name!r} of length {arr.shape[0]}"
            )
        return int(arr[idx])
    if isinstance(node, BinOp):
        left = _eval(node.left, text, axes, tensors)
        right = _eval(node.right, text, axes, tensors)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if right == 0:
            raise ConstraintViolated(text, "division by zero")
        return left // right
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


def eval_constraint(
    expr: ConstraintExpr,
    axes: Mapping[str, int],
    tensors: Mapping[str, np.ndarray] | None = None,
) -> bool:
    """Evaluate the comparison under bound axes and (optionally) tensors."""
    tensors = tensors or {}
    left = _eval(expr.root.left, expr.text, axes, tensors)
    right = _eval(expr.root.right, expr.text, axes, tensors)
    op = expr.root.op
    if op == "==":
        return left == right
    if op == "<=":
        return left <= right
    if op == ">=":
        return left >= right
    if op == "<":
        return left < right
    return left > right


def check_constraint(
    expr: ConstraintExpr,
    axes: Mapping[str, int],
    tensors: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Evaluate and raise ConstraintViolated when the comparison is false."""
    if not eval_constraint(expr, axes, tensors):
        raise ConstraintViolated(expr.text)
