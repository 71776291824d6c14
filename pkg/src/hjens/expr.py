"""Small expression language for user-supplied potentials, actions and fields.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right-associative, binds tighter than unary minus
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

So ``-x^2`` parses as ``-(x^2)`` and ``2^-1`` as ``2^(-1)``.

Trees are immutable and evaluate elementwise over numpy arrays, so a single
parsed potential serves both single trajectories and whole grids.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    ArityError,
    ExprDomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
)

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
}
CONSTANTS = {"pi": math.pi}
_ALIASES = ("x", "y", "z")


def model_variables(dim: int, extra: Iterable[str] = ()) -> dict[str, str]:
    """Identifier table for an ``dim``-degree-of-freedom model.

    Maps every accepted spelling to its canonical variable name: ``t``,
    ``q1..qs``, ``p1..ps`` and the aliases ``x, y, z`` for ``s <= 3``.
    """
    names = {"t": "t"}
    for i in range(1, dim + 1):
        names[f"q{i}"] = f"q{i}"
        names[f"p{i}"] = f"p{i}"
    if dim <= 3:
        for i, alias in enumerate(_ALIASES[:dim], start=1):
            names[alias] = f"q{i}"
    for name in extra:
        names[name] = name
    return names


# ---------------------------------------------------------------------------
# tree nodes


class Expr:
    """Base class of expression trees."""

    precedence = 100

    def evaluate(self, bindings: Mapping[str, object]):
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def free_vars(self) -> frozenset:
        raise NotImplementedError

    def depends_on(self, var: str) -> bool:
        return var in self.free_vars()

    def __call__(self, **bindings):
        return self.evaluate(bindings)


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def evaluate(self, bindings):
        return self.value

    def diff(self, var):
        return ZERO

    def free_vars(self):
        return frozenset()

    def __str__(self):
        if self.value == math.pi:
            return "pi"
        text = repr(float(self.value))
        if text.endswith(".0"):
            text = text[:-2]
        return text if self.value >= 0 else f"({text})"


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def evaluate(self, bindings):
        try:
            return bindings[self.name]
        except KeyError:
            raise UnboundVariableError(self.name) from None

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def free_vars(self):
        return frozenset((self.name,))

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def evaluate(self, bindings):
        return -self.arg.evaluate(bindings)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def free_vars(self):
        return self.arg.free_vars()

    def __str__(self):
        return "-" + _wrap(self.arg, self.precedence + 1)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def precedence(self):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[self.op]

    def evaluate(self, bindings):
        a = self.left.evaluate(bindings)
        b = self.right.evaluate(bindings)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            with np.errstate(divide="ignore", invalid="ignore"):
                return a / b
        return _power(a, b)

    def diff(self, var):
        u, v = self.left, self.right
        du, dv = u.diff(var), v.diff(var)
        if self.op == "+":
            return add(du, dv)
        if self.op == "-":
            return sub(du, dv)
        if self.op == "*":
            return add(mul(du, v), mul(u, dv))
        if self.op == "/":
            return sub(div(du, v), div(mul(u, dv), power(v, Num(2.0))))
        # power
        if not v.depends_on(var):
            if isinstance(v, Num):
                reduced = Num(v.value - 1.0)
            else:
                reduced = sub(v, ONE)
            return mul(mul(v, power(u, reduced)), du)
        if not u.depends_on(var):
            return mul(mul(self, call("log", u)), dv)
        return mul(self, add(mul(dv, call("log", u)), div(mul(v, du), u)))

    def free_vars(self):
        return self.left.free_vars() | self.right.free_vars()

    def __str__(self):
        p = self.precedence
        if self.op == "^":
            return f"{_wrap(self.left, p + 1)}^{_wrap(self.right, p)}"
        right_min = p + 1 if self.op in "-/" else p
        return f"{_wrap(self.left, p)} {self.op} {_wrap(self.right, right_min)}"


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple

    def evaluate(self, bindings):
        vals = [a.evaluate(bindings) for a in self.args]
        f = self.func
        if f == "log":
            _check_domain("log", vals[0], lambda x: x > 0)
            return np.log(vals[0])
        if f == "sqrt":
            _check_domain("sqrt", vals[0], lambda x: x >= 0)
            return np.sqrt(vals[0])
        if f == "min":
            return np.minimum(vals[0], vals[1])
        if f == "max":
            return np.maximum(vals[0], vals[1])
        return getattr(np, f)(vals[0])

    def diff(self, var):
        f = self.func
        if f in ("min", "max"):
            a, b = self.args
            cmp = "<=" if f == "min" else ">="
            return select(a, cmp, b, a.diff(var), b.diff(var))
        (u,) = self.args
        du = u.diff(var)
        if du == ZERO:
            return ZERO
        if f == "sin":
            outer = call("cos", u)
        elif f == "cos":
            outer = neg(call("sin", u))
        elif f == "tan":
            outer = div(ONE, power(call("cos", u), Num(2.0)))
        elif f == "exp":
            outer = self
        elif f == "log":
            return div(du, u)
        elif f == "sqrt":
            return div(du, mul(Num(2.0), self))
        else:  # abs
            outer = div(u, self)
        return mul(outer, du)

    def free_vars(self):
        out = frozenset()
        for a in self.args:
            out |= a.free_vars()
        return out

    def __str__(self):
        return f"{self.func}({', '.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class Select(Expr):
    """Piecewise choice produced by differentiating ``min``/``max``."""

    lhs: Expr
    cmp: str
    rhs: Expr
    if_true: Expr
    if_false: Expr

    def evaluate(self, bindings):
        a = self.lhs.evaluate(bindings)
        b = self.rhs.evaluate(bindings)
        cond = a <= b if self.cmp == "<=" else a >= b
        x = self.if_true.evaluate(bindings)
        y = self.if_false.evaluate(bindings)
        out = np.where(cond, x, y)
        return out.item() if out.ndim == 0 else out

    def diff(self, var):
        return select(self.lhs, self.cmp, self.rhs, self.if_true.diff(var), self.if_false.diff(var))

    def free_vars(self):
        return (self.lhs.free_vars() | self.rhs.free_vars()
                | self.if_true.free_vars() | self.if_false.free_vars())

    def __str__(self):
        return f"select({self.lhs} {self.cmp} {self.rhs}, {self.if_true}, {self.if_false})"


ZERO = Num(0.0)
ONE = Num(1.0)


def _wrap(e: Expr, min_prec: int) -> str:
    text = str(e)
    return f"({text})" if e.precedence < min_prec else text


def _check_domain(name, value, ok):
    arr = np.asarray(value)
    with np.errstate(invalid="ignore"):
        good = ok(arr) | np.isnan(arr)
    if not np.all(good):
        bad = arr[~good] if arr.ndim else arr
        raise ExprDomainError(name, float(np.ravel(bad)[0]))


def _power(a, b):
    b_arr = np.asarray(b)
    a_arr = np.asarray(a)
    if np.any(a_arr < 0):
        frac = np.broadcast_to(b_arr != np.round(b_arr), np.broadcast(a_arr, b_arr).shape)
        neg = np.broadcast_to(a_arr < 0, frac.shape)
        if np.any(frac & neg):
            bad = np.broadcast_to(a_arr, frac.shape)[frac & neg]
            raise ExprDomainError("^", float(bad[0]))
    with np.errstate(divide="ignore", over="ignore"):
        out = np.power(a_arr * 1.0, b_arr)
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# simplifying constructors


def add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if isinstance(a, Neg) and isinstance(b, Neg):
        return mul(a.arg, b.arg)
    if isinstance(a, Neg):
        return neg(mul(a.arg, b))
    if isinstance(b, Neg):
        return neg(mul(a, b.arg))
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    if isinstance(a, Neg):
        return neg(div(a.arg, b))
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if b == ONE:
        return a
    if b == ZERO:
        return ONE
    return BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(func: str, *args: Expr) -> Expr:
    return Call(func, tuple(args))


def select(lhs, cmp, rhs, if_true, if_false) -> Expr:
    if if_true == if_false:
        return if_true
    return Select(lhs, cmp, rhs, if_true, if_false)


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text, names, constants):
        self.text = text
        self.names = names
        self.constants = constants
        self.tokens = self._tokenize(text)
        self.pos = 0

    def _offset(self, char_index):
        return len(self.text[:char_index].encode("utf-8"))

    def _tokenize(self, text):
        tokens = []
        i = 0
        while i < len(text):
            m = _TOKEN.match(text, i)
            if m is None or m.end() == i:
                if text[i:].strip() == "":
                    break
                j = i
                while text[j].isspace():
                    j += 1
                raise ExprSyntaxError(f"unexpected character {text[j]!r}", self._offset(j))
            kind = m.lastgroup
            start = m.start(kind)
            tokens.append((kind, m.group(kind), start))
            i = m.end()
        tokens.append(("end", "", len(text)))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, text, start = self.take()
        if text != value:
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self._offset(start))

    def parse(self):
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", 0)
        e = self.expr()
        kind, text, start = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", self._offset(start))
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = BinOp(op, e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = BinOp(op, e, rhs)
        return e

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text in ("-", "+"):
            self.take()
            arg = self.unary()
            return arg if text == "+" else Neg(arg)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, start = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(text, start)
            if text in FUNCTIONS:
                raise ExprSyntaxError(f"function {text!r} needs arguments", self._offset(start))
            if text in self.constants:
                return Num(float(self.constants[text]))
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if self.names is None:
                return Var(text)
            if text not in self.names:
                raise UnknownIdentifierError(text, self._offset(start))
            return Var(self.names[text])
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", self._offset(start))

    def call(self, name, start):
        if name not in FUNCTIONS:
            raise UnknownIdentifierError(name, self._offset(start))
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ArityError(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", self._offset(start)
            )
        return Call(name, tuple(args))


def parse_expression(
    text: str,
    names: Mapping[str, str] | None = None,
    constants: Mapping[str, float] | None = None,
) -> Expr:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text
        Source text.
    names
        Accepted identifiers mapped to canonical variable names (see
        :func:`model_variables`).  ``None`` accepts any identifier.
    constants
        Named parameters folded into numeric literals at parse time,
        e.g. ``{"m": 1.0, "omega": 2.0}``.
    """
    return _Parser(text, names, dict(constants or {})).parse()


def eval_expression(e: Expr, bindings: Mapping[str, object]):
    return e.evaluate(bindings)


def derivative(e: Expr, var: str, names: Mapping[str, str] | None = None) -> Expr:
    """Symbolic derivative of ``e`` with respect to ``var`` (aliases resolved via ``names``)."""
    if names is not None:
        var = names.get(var, var)
    elif var not in e.free_vars() and var in _ALIASES:
        var = f"q{_ALIASES.index(var) + 1}"
    return e.diff(var)
