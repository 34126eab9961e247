"""Scalar expressions: parsing, printing, evaluation and forward-mode AD.

The grammar is ordinary infix arithmetic::

    sum     := product (('+' | '-') product)*
    product := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | FUNC '(' sum ')' | '(' sum ')'

so ``^`` binds tighter than unary minus (``-x^2 == -(x^2)``) and is right
associative.  ``**`` is accepted as a synonym for ``^``.

Evaluation is generic over the number type: floats, numpy arrays and
:class:`Dual` numbers (whose parts may themselves be arrays or duals) all go
through the same tree walk.  Duals carry a tag so that nested
differentiation never confuses perturbations.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifierError

__all__ = [
    "Expression", "Num", "Var", "Neg", "BinOp", "Call",
    "parse", "as_expression", "evaluate", "eval_with_partials",
    "substitute", "Dual", "new_tag", "primal", "tangent",
    "derivative", "value_and_gradient", "FUNCTIONS",
    "Tape", "compile_tape",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
CONSTANTS = {"pi": math.pi}
_DEFAULT_VARIABLE = re.compile(r"^(?:x[1-9]\d*|u[1-9]\d*|v|w)$")


# ---------------------------------------------------------------------------
# AST


class Expression:
    """Base class of AST nodes.  Nodes are immutable and compare structurally."""

    __slots__ = ()

    @property
    def free_vars(self) -> frozenset:
        return frozenset(_collect_vars(self))

    def __str__(self) -> str:
        return to_string(self)

    def __call__(self, **bindings):
        return evaluate(self, bindings)


@dataclass(frozen=True, eq=True, repr=True)
class Num(Expression):
    value: float


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, eq=True, repr=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True, eq=True, repr=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression


@dataclass(frozen=True, eq=True, repr=True)
class Call(Expression):
    func: str
    arg: Expression


def _collect_vars(e):
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, Neg):
        yield from _collect_vars(e.arg)
    elif isinstance(e, BinOp):
        yield from _collect_vars(e.left)
        yield from _collect_vars(e.right)
    elif isinstance(e, Call):
        yield from _collect_vars(e.arg)


# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r")"
)


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:]
            stripped = rest.lstrip()
            if not stripped:
                break
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}",
                                  pos + len(rest) - len(stripped))
        kind = m.lastgroup
        if kind is None:
            break
        start = m.start(kind)
        tok = m.group(kind)
        if tok == "**":
            tok = "^"
        tokens.append((kind, tok, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, is_variable):
        self.tokens = _tokenize(text)
        self.i = 0
        self.is_variable = is_variable

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, value):
        kind, tok, pos = self.tok
        if tok != value or kind == "end":
            what = "end of input" if kind == "end" else repr(tok)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", pos)
        self.advance()

    def parse(self):
        node = self.sum()
        kind, tok, pos = self.tok
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok!r}", pos)
        return node

    def sum(self):
        node = self.product()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.product())
        return node

    def product(self):
        node = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, tok, _ = self.tok
        if kind == "op" and tok == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "op" and tok == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, tok, pos = self.advance()
        if kind == "num":
            return Num(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return Call(tok, arg)
            if tok in CONSTANTS:
                return Num(CONSTANTS[tok])
            if not self.is_variable(tok):
                raise UnknownIdentifierError(tok, pos)
            return Var(tok)
        if kind == "op" and tok == "(":
            node = self.sum()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(tok)
        raise ExprSyntaxError(f"unexpected {what}", pos)


def parse(text: str, variables: Sequence[str] | None = None) -> Expression:
    """Parse ``text`` into an :class:`Expression`.

    ``variables`` restricts the admissible identifiers; by default any of
    ``x1, x2, ...``, ``u1, u2, ...``, ``v`` and ``w`` is accepted.
    """
    if variables is None:
        is_variable = _DEFAULT_VARIABLE.match
    else:
        allowed = frozenset(variables)
        is_variable = allowed.__contains__
    return _Parser(text, is_variable).parse()


def as_expression(obj, variables=None) -> Expression:
    if isinstance(obj, Expression):
        return obj
    if isinstance(obj, (int, float)):
        return Num(float(obj))
    if isinstance(obj, str):
        return parse(obj, variables)
    raise TypeError(f"cannot interpret {obj!r} as an expression")


# ---------------------------------------------------------------------------
# Printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def to_string(e: Expression) -> str:
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        return f"-{inner}" if _prec(e.arg) >= _PREC["neg"] else f"-({inner})"
    p = _PREC[e.op]
    left, right = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
    else:
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
    return f"{left} {e.op} {right}"


def substitute(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    """Replace variables by expressions (pure tree composition, no rewriting)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.func, substitute(e.arg, mapping))
    return e


# ---------------------------------------------------------------------------
# Dual numbers

_tags = itertools.count(1)


def new_tag() -> int:
    """Fresh perturbation tag; later tags sit above earlier ones when nested."""
    return next(_tags)


class Dual:
    """``val + eps * d`` with ``d**2 == 0`` for the perturbation ``tag``.

    ``val`` and ``eps`` may be floats, numpy arrays or duals with a smaller
    tag.  Operands whose tag differs from the result tag are constants with
    respect to it.
    """

    __slots__ = ("tag", "val", "eps")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, tag, val, eps):
        self.tag = tag
        self.val = val
        self.eps = eps

    def __repr__(self):
        return f"Dual(tag={self.tag}, val={self.val!r}, eps={self.eps!r})"

    def __add__(self, other):
        t, a, da, b, db = _split(self, other)
        return Dual(t, a + b, da + db)

    __radd__ = __add__

    def __sub__(self, other):
        t, a, da, b, db = _split(self, other)
        return Dual(t, a - b, da - db)

    def __rsub__(self, other):
        t, a, da, b, db = _split(other, self)
        return Dual(t, a - b, da - db)

    def __mul__(self, other):
        t, a, da, b, db = _split(self, other)
        return Dual(t, a * b, da * b + a * db)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return Dual(self.tag, -self.val, -self.eps)

    def __pos__(self):
        return self

    def __pow__(self, other):
        if isinstance(other, Dual):
            return exp(other * log(self))
        return power(self, float(other))

    def __rpow__(self, other):
        return exp(self * log(other))


def _tag_of(x):
    return x.tag if isinstance(x, Dual) else 0


def _parts(x, tag):
    if isinstance(x, Dual) and x.tag == tag:
        return x.val, x.eps
    return x, 0.0


def _split(a, b):
    t = max(_tag_of(a), _tag_of(b))
    av, ad = _parts(a, t)
    bv, bd = _parts(b, t)
    return t, av, ad, bv, bd


def primal(x):
    """Strip every perturbation, returning the underlying float/array."""
    while isinstance(x, Dual):
        x = x.val
    return x


def tangent(x, tag):
    """Coefficient of the perturbation ``tag`` in ``x``."""
    if not isinstance(x, Dual) or x.tag < tag:
        return 0.0 * primal(x) if isinstance(primal(x), np.ndarray) else 0.0
    if x.tag == tag:
        return x.eps
    return Dual(x.tag, tangent(x.val, tag), tangent(x.eps, tag))


def derivative(f: Callable, point: Sequence, index: int):
    """Partial derivative of ``f(point)`` with respect to ``point[index]``."""
    tag = new_tag()
    seeded = list(point)
    seeded[index] = Dual(tag, seeded[index], 1.0)
    return tangent(f(seeded), tag)


def value_and_gradient(f: Callable, point: Sequence, indices=None):
    """``f(point)`` and its partials along ``indices`` (all by default)."""
    point = list(point)
    if indices is None:
        indices = range(len(point))
    value = None
    grad = []
    for i in indices:
        tag = new_tag()
        seeded = list(point)
        seeded[i] = Dual(tag, seeded[i], 1.0)
        out = f(seeded)
        if value is None:
            value = _strip(out, tag)
        grad.append(tangent(out, tag))
    if value is None:
        value = f(point)
    return value, grad


def _strip(x, tag):
    """Remove perturbation ``tag`` (keeping lower ones)."""
    if not isinstance(x, Dual) or x.tag < tag:
        return x
    if x.tag == tag:
        return x.val
    return Dual(x.tag, _strip(x.val, tag), _strip(x.eps, tag))


# ---------------------------------------------------------------------------
# Elementary functions, generic over floats / arrays / duals


def _require(cond, message, where):
    if not np.all(cond):
        raise DomainError(message, where)


def divide(a, b, where=None):
    _require(primal(b) != 0, "division by zero", where)
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return a / b
    t, av, ad, bv, bd = _split(a, b)
    q = divide(av, bv, where)
    return Dual(t, q, divide(ad - q * bd, bv, where))


def power(a, c: float, where=None):
    """``a ** c`` for a constant real exponent ``c``."""
    p = primal(a)
    integral = float(c).is_integer()
    if not integral:
        _require(p >= 0, "negative base with non-integer exponent", where)
    if c < 0:
        _require(p != 0, "zero base with negative exponent", where)
    if not isinstance(a, Dual):
        if integral and c >= 0:
            return a ** int(c)
        return np.power(a, c) if isinstance(a, np.ndarray) else float(a) ** c
    if c == 0:
        return Dual(a.tag, power(a.val, 0.0, where), 0.0 * a.eps)
    if c < 1 and not integral:
        _require(p != 0, "derivative of fractional power at zero", where)
    return Dual(a.tag, power(a.val, c, where), c * power(a.val, c - 1.0, where) * a.eps)


def sin(x, where=None):
    if isinstance(x, Dual):
        return Dual(x.tag, sin(x.val), cos(x.val) * x.eps)
    return np.sin(x)


def cos(x, where=None):
    if isinstance(x, Dual):
        return Dual(x.tag, cos(x.val), -sin(x.val) * x.eps)
    return np.cos(x)


def exp(x, where=None):
    if isinstance(x, Dual):
        ev = exp(x.val)
        return Dual(x.tag, ev, ev * x.eps)
    return np.exp(x)


def log(x, where=None):
    _require(primal(x) > 0, "log of non-positive value", where)
    if isinstance(x, Dual):
        return Dual(x.tag, log(x.val), divide(x.eps, x.val))
    return np.log(x)


def sqrt(x, where=None):
    p = primal(x)
    _require(p >= 0, "sqrt of negative value", where)
    if isinstance(x, Dual):
        _require(p > 0, "derivative of sqrt at zero", where)
        s = sqrt(x.val)
        return Dual(x.tag, s, divide(x.eps, 2.0 * s))
    return np.sqrt(x)


def tanh(x, where=None):
    if isinstance(x, Dual):
        t = tanh(x.val)
        return Dual(x.tag, t, (1.0 - t * t) * x.eps)
    return np.tanh(x)


_FUNC_IMPL = {"sin": sin, "cos": cos, "exp": exp, "log": log, "sqrt": sqrt, "tanh": tanh}


def _const_value(e):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg):
        c = _const_value(e.arg)
        return None if c is None else -c
    return None


def evaluate(e: Expression, bindings: Mapping[str, object]):
    """Evaluate ``e`` with variables taken from ``bindings``.

    Values may be floats, numpy arrays or duals.  Domain violations raise
    :class:`DomainError` naming the offending subexpression.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise DomainError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, bindings)
    if isinstance(e, Call):
        return _FUNC_IMPL[e.func](evaluate(e.arg, bindings), where=e)
    a = evaluate(e.left, bindings)
    op = e.op
    if op == "^":
        c = _const_value(e.right)
        if c is not None:
            return power(a, c, where=e)
        b = evaluate(e.right, bindings)
        if isinstance(a, Dual) or isinstance(b, Dual):
            return exp(b * log(a, where=e))
        _require(a > 0, "non-positive base with variable exponent", e)
        return np.power(a, b)
    b = evaluate(e.right, bindings)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return divide(a, b, where=e)


def eval_with_partials(e: Expression, bindings: Mapping[str, float], wrt: Sequence[str]):
    """Value of ``e`` and its exact first partials with respect to ``wrt``."""
    names = list(wrt)
    missing = e.free_vars - set(bindings)
    if missing:
        raise DomainError(f"unbound variables {sorted(missing)}")
    value = evaluate(e, bindings)
    partials = []
    for name in names:
        tag = new_tag()
        seeded = dict(bindings)
        seeded[name] = Dual(tag, seeded.get(name, 0.0), 1.0)
        partials.append(tangent(evaluate(e, seeded), tag))
    return value, partials


# ---------------------------------------------------------------------------
# Tapes for the compiled jet kernels

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_POWC, OP_POW = range(9)
OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT, OP_TANH = range(9, 15)
_FUNC_OPS = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "log": OP_LOG,
             "sqrt": OP_SQRT, "tanh": OP_TANH}
_BIN_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}


@dataclass(frozen=True, eq=False)
class Tape:
    """Flat single-assignment program for a list of expressions.

    Instruction ``i`` writes slot ``i``; ``arg0``/``arg1`` index earlier
    slots (or the constant pool / input column for CONST / VAR / POWC).
    """

    ops: np.ndarray
    arg0: np.ndarray
    arg1: np.ndarray
    consts: np.ndarray
    outputs: np.ndarray
    variables: tuple
    labels: tuple

    def __len__(self):
        return len(self.ops)


def compile_tape(exprs: Sequence[Expression], variables: Sequence[str]) -> Tape:
    variables = tuple(variables)
    column = {name: i for i, name in enumerate(variables)}
    ops, a0, a1, labels = [], [], [], []
    consts: list[float] = []
    memo: dict = {}

    def emit(op, x, y, node):
        ops.append(op)
        a0.append(x)
        a1.append(y)
        labels.append(to_string(node))
        return len(ops) - 1

    def const(value, node):
        consts.append(float(value))
        return emit(OP_CONST, len(consts) - 1, 0, node)

    def walk(e):
        if e in memo:
            return memo[e]
        if isinstance(e, Num):
            slot = const(e.value, e)
        elif isinstance(e, Var):
            if e.name not in column:
                raise DomainError(f"variable {e.name!r} not among {variables}")
            slot = emit(OP_VAR, column[e.name], 0, e)
        elif isinstance(e, Neg):
            slot = emit(OP_NEG, walk(e.arg), 0, e)
        elif isinstance(e, Call):
            slot = emit(_FUNC_OPS[e.func], walk(e.arg), 0, e)
        elif e.op == "^" and _const_value(e.right) is not None:
            base = walk(e.left)
            consts.append(float(_const_value(e.right)))
            slot = emit(OP_POWC, base, len(consts) - 1, e)
        else:
            slot = emit(_BIN_OPS[e.op], walk(e.left), walk(e.right), e)
        memo[e] = slot
        return slot

    outputs = [walk(as_expression(e)) for e in exprs]
    return Tape(
        ops=np.asarray(ops, dtype=np.int64),
        arg0=np.asarray(a0, dtype=np.int64),
        arg1=np.asarray(a1, dtype=np.int64),
        consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
        outputs=np.asarray(outputs, dtype=np.int64),
        variables=variables,
        labels=tuple(labels),
    )


Scalar = Union[float, np.ndarray, Dual]
