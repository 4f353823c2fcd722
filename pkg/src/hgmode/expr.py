"""Coefficient expressions in ``t``.

Expressions are small immutable trees over ``t``, exact rational constants,
the four arithmetic operations, integer powers and ``sqrt``/``exp``/``log``.
Named parameters are substituted by their values while parsing.  Evaluation
compiles a tree to a Python function once per backend, so the same tree can be
evaluated on floats, extended-precision scalars, arrays of either, double-double
arrays, or jets (which yields exact derivatives).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .jet import Jet
from .precision import DomainError, Precision, get_precision


class SingularPointError(ArithmeticError):
    """Evaluation hit a point where a coefficient is undefined."""

    def __init__(self, t, detail: str = ""):
        self.t = t
        msg = f"singular point at t = {t}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


FUNCTIONS = ("sqrt", "exp", "log")


# ---------------------------------------------------------------------------
# tree


@dataclass(frozen=True, eq=True)
class Expr:
    _compiled: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def depends_on_t(self) -> bool:
        return any(c.depends_on_t() for c in self.children())

    def children(self) -> tuple:
        return ()

    def is_zero(self) -> bool:
        return isinstance(self, Num) and self.value == 0

    def is_constant(self) -> bool:
        return isinstance(self, Num)

    # operator sugar for building trees in code
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, Fraction(n))

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: Fraction = Fraction(0)


@dataclass(frozen=True, eq=True)
class Var(Expr):
    def depends_on_t(self) -> bool:
        return True


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str = "+"
    left: Expr = None
    right: Expr = None

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr = None
    exponent: Fraction = Fraction(1)

    def children(self):
        return (self.base,)


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str = "exp"
    arg: Expr = None

    def children(self):
        return (self.arg,)


T = Var()
ZERO = Num(Fraction(0))
ONE = Num(Fraction(1))


def _wrap(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Num(to_fraction(x))


def to_fraction(x) -> Fraction:
    """Exact rational for a literal; floats go through their decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite constant {x}")
        return Fraction(repr(float(x)))
    return Fraction(str(x))


# smart constructors with constant folding

def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if b.is_zero():
        return a
    if a.is_zero():
        return neg(b)
    return BinOp("-", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    return BinOp("*", Num(Fraction(-1)), a)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if a.is_zero() or b.is_zero():
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if b.is_zero():
        raise ZeroDivisionError("division by the constant zero")
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value / b.value)
    if a.is_zero():
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def power(a: Expr, n: Fraction) -> Expr:
    n = Fraction(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Num) and n.denominator == 1:
        if a.value == 0 and n < 0:
            raise ZeroDivisionError("zero raised to a negative power")
        return Num(a.value ** n.numerator)
    return Pow(a, n)


def call(func: str, a: Expr) -> Expr:
    if func not in FUNCTIONS:
        raise ValueError(f"unknown function {func!r}")
    if isinstance(a, Num):
        v = a.value
        if func == "exp" and v == 0:
            return ONE
        if func == "log" and v == 1:
            return ZERO
        if func == "sqrt" and v >= 0:
            rn, rd = math.isqrt(v.numerator), math.isqrt(v.denominator)
            if rn * rn == v.numerator and rd * rd == v.denominator:
                return Num(Fraction(rn, rd))
    return Call(func, a)


# ---------------------------------------------------------------------------
# text form

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _num_text(v: Fraction) -> str:
    s = str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return f"({s})" if v < 0 or v.denominator != 1 else s


def to_text(e: Expr, parent: int = 0) -> str:
    if isinstance(e, Num):
        return _num_text(e.value)
    if isinstance(e, Var):
        return "t"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, Pow):
        if e.exponent.denominator == 1:
            k = e.exponent.numerator
            base = to_text(e.base, 3)
            return f"{base}^{k}" if k >= 0 else f"{base}^({k})"
        # rational exponents are not part of the text grammar
        return f"exp({_num_text(e.exponent)}*log({to_text(e.base)}))"
    p = _PREC[e.op]
    right_parent = p + 1 if e.op in "-/" else p
    text = f"{to_text(e.left, p)} {e.op} {to_text(e.right, right_parent)}"
    return f"({text})" if p < parent else text


# ---------------------------------------------------------------------------
# evaluation


class _Compiler:
    def __init__(self):
        self.consts: list[Fraction] = []
        self.index: dict[Fraction, int] = {}

    def const(self, v: Fraction) -> str:
        if v not in self.index:
            self.index[v] = len(self.consts)
            self.consts.append(v)
        return f"c{self.index[v]}"

    def emit(self, e: Expr) -> str:
        if isinstance(e, Num):
            return self.const(e.value)
        if isinstance(e, Var):
            return "t"
        if isinstance(e, BinOp):
            return f"({self.emit(e.left)} {e.op} {self.emit(e.right)})"
        if isinstance(e, Call):
            return f"{e.func}({self.emit(e.arg)})"
        if isinstance(e, Pow):
            if e.exponent.denominator == 1:
                return f"({self.emit(e.base)} ** {e.exponent.numerator})"
            return f"exp({self.const(e.exponent)} * log({self.emit(e.base)}))"
        raise TypeError(f"cannot compile {e!r}")


def compile_expr(e: Expr, kit: Precision | None = None):
    """Return a function ``t -> value`` for the given backend."""
    kit = kit if kit is not None else get_precision(16)
    key = (id(kit), kit.digits)
    fn = e._compiled.get(key)
    if fn is None:
        comp = _Compiler()
        body = comp.emit(e)
        names = {f"c{i}": kit.const(v) for i, v in enumerate(comp.consts)}
        names.update(sqrt=kit.sqrt, exp=kit.exp, log=kit.log)
        args = ", ".join(f"{k}={k}" for k in names)
        src = f"def _f(t, {args}):\n    return {body}\n" if args else f"def _f(t):\n    return {body}\n"
        scope: dict = {}
        exec(compile(src, "<expr>", "exec"), names, scope)
        fn = scope["_f"]
        e._compiled[key] = fn
    return fn


def evaluate(e: Expr, t, kit: Precision | None = None):
    """Evaluate at ``t`` (scalar, array or jet).

    Division by zero or leaving the real domain raises
    :class:`SingularPointError`.  Array evaluations may instead produce
    non-finite entries; callers check those.
    """
    fn = compile_expr(e, kit)
    with np.errstate(all="ignore"):
        try:
            value = fn(t)
        except (ZeroDivisionError, DomainError) as exc:
            raise SingularPointError(_point(t), str(exc)) from None
    if not e.depends_on_t():
        # constants must still broadcast against array/jet arguments
        value = t * 0 + value
    return value


def _point(t):
    return t.value if isinstance(t, Jet) else t


def expr_jet(e: Expr, t, order: int, kit: Precision | None = None) -> Jet:
    """Value and derivatives of ``e`` at ``t`` up to ``order``."""
    kit = kit if kit is not None else get_precision(16)
    return evaluate(e, Jet.variable(t, order, kit), kit)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[_Token] = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                line, col = self.where(pos)
                raise ExprSyntaxError(f"unexpected character {text[pos]!r}", line, col)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append(_Token(kind, m.group(kind), start))
            pos = m.end()
        self.tokens.append(_Token("end", "", len(text)))

    def where(self, pos: int) -> tuple[int, int]:
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col


class DiffPoly(dict):
    """Operator in normal form: mapping ``k -> coefficient of d^k``."""

    def has_d(self) -> bool:
        return any(k > 0 for k in self)

    def pure(self) -> Expr:
        return self.get(0, ZERO)

    @classmethod
    def scalar(cls, e: Expr) -> "DiffPoly":
        return cls({0: e})

    def combine(self, other: "DiffPoly", fn) -> "DiffPoly":
        out = DiffPoly()
        for k in sorted(set(self) | set(other)):
            out[k] = fn(self.get(k, ZERO), other.get(k, ZERO))
        return out

    def scale(self, c: Expr) -> "DiffPoly":
        return DiffPoly({k: mul(c, v) for k, v in self.items()})


class Parser:
    """Recursive-descent parser for coefficient expressions and operators.

    ``d`` stands for the derivative operator and is only accepted when
    ``allow_d`` is true, as a rightmost factor (coefficients to its left).
    """

    def __init__(self, text: str, params: dict | None = None, allow_d: bool = False):
        self.lex = _Lexer(text)
        self.toks = self.lex.tokens
        self.i = 0
        self.allow_d = allow_d
        self.params = {k: to_fraction(v) for k, v in (params or {}).items()}
        for name in self.params:
            if name in ("t", "d") or name in FUNCTIONS:
                raise ValueError(f"parameter name {name!r} is reserved")

    # token helpers
    @property
    def tok(self) -> _Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Token | None = None, cls=ExprSyntaxError):
        line, col = self.lex.where((tok or self.tok).pos)
        raise cls(msg, line, col)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")

    # grammar
    def parse(self) -> DiffPoly:
        result = self.op()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return result

    def op(self) -> DiffPoly:
        result = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            sign = self.tok.text
            self.i += 1
            rhs = self.term()
            result = result.combine(rhs, add if sign == "+" else sub)
        return result

    def term(self) -> DiffPoly:
        negate = False
        while self.tok.kind == "op" and self.tok.text in "+-":
            negate ^= self.tok.text == "-"
            self.i += 1
        start = self.tok
        result = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            opname = self.tok.text
            optok = self.tok
            self.i += 1
            rhs = self.factor()
            if opname == "*":
                if result.has_d():
                    self.error("'d' must be the rightmost factor of a term", optok)
                result = rhs.scale(result.pure())
            else:
                if rhs.has_d():
                    self.error("cannot divide by an expression containing 'd'", optok)
                if result.has_d() and not rhs.pure().is_constant():
                    self.error("'d' must be the rightmost factor of a term", optok)
                try:
                    den = rhs.pure()
                    result = DiffPoly({k: div(v, den) for k, v in result.items()})
                except ZeroDivisionError:
                    self.error("division by zero", start)
        if negate:
            result = result.scale(Num(Fraction(-1)))
        return result

    def factor(self) -> DiffPoly:
        start = self.tok
        base = self.atom()
        if self.accept("^"):
            sign = -1 if self.accept("-") else 1
            if self.tok.kind != "num" or not self.tok.text.isdigit():
                self.error("exponent must be an integer")
            k = sign * int(self.tok.text)
            self.i += 1
            if base.has_d():
                if base != DiffPoly({1: ONE}):
                    self.error("only 'd' itself may be raised to a power", start)
                if k < 0:
                    self.error("negative power of 'd'", start)
                return DiffPoly({k: ONE})
            try:
                return DiffPoly.scalar(power(base.pure(), Fraction(k)))
            except ZeroDivisionError:
                self.error("zero raised to a negative power", start)
        return base

    def atom(self) -> DiffPoly:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return DiffPoly.scalar(Num(Fraction(tok.text)))
        if tok.kind == "ident":
            self.i += 1
            name = tok.text
            if name == "d":
                if not self.allow_d:
                    self.error("'d' is not allowed in a coefficient expression", tok)
                return DiffPoly({1: ONE})
            if name == "t":
                return DiffPoly.scalar(T)
            if name in FUNCTIONS:
                self.expect("(")
                inner = self.op()
                self.expect(")")
                if inner.has_d():
                    self.error(f"'d' inside {name}()", tok)
                return DiffPoly.scalar(call(name, inner.pure()))
            if name in self.params:
                return DiffPoly.scalar(Num(self.params[name]))
            self.error(f"unknown identifier {name!r}", tok, UnknownIdentifierError)
        if self.accept("("):
            inner = self.op()
            self.expect(")")
            return inner
        self.error(f"unexpected {tok.text or 'end of input'!r}")


def parse_expr(text: str, params: dict | None = None) -> Expr:
    """Parse a coefficient expression in ``t``."""
    return Parser(str(text), params).parse().pure()
