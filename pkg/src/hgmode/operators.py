"""Scalar differential operators, first-order systems and grids."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .ddarray import DD
from .expr import (
    ONE,
    ZERO,
    Expr,
    ExprSyntaxError,
    Num,
    Parser,
    SingularPointError,
    T,
    add,
    call,
    div,
    evaluate,
    mul,
    neg,
    parse_expr,
    power,
    sub,
    to_fraction,
    to_text,
)
from .jet import Jet
from .precision import Precision, as_precision, get_precision


class ZeroLeadingCoefficientError(ExprSyntaxError):
    pass


@dataclass(frozen=True)
class ScalarOperator:
    """``L = sum_k c_k(t) d^k`` together with the right-hand side ``b(t)``."""

    coeffs: tuple
    rhs: Expr = ZERO
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.coeffs) < 2:
            raise ValueError("an operator needs rank at least 1")
        if self.coeffs[-1].is_zero():
            raise ValueError("leading coefficient is zero")

    @property
    def rank(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_homogeneous(self) -> bool:
        return self.rhs.is_zero()

    def to_text(self) -> str:
        parts = [f"({to_text(c)})*d^{k}" for k, c in enumerate(self.coeffs) if not c.is_zero() or k == self.rank]
        return " + ".join(parts)

    def coefficient_values(self, t, kit=None) -> list:
        return [evaluate(c, t, kit) for c in self.coeffs]


def parse_operator(text: str, params: dict | None = None, rhs: str | Expr = "0") -> ScalarOperator:
    """Parse operator text such as ``"d^2 - t"``.

    Coefficients must stand to the left of the powers of ``d``.
    """
    parser = Parser(text, params, allow_d=True)
    poly = parser.parse()
    rank = max(poly)
    if rank < 1:
        raise ZeroLeadingCoefficientError("operator has no derivative term", 1, 1)
    coeffs = tuple(poly.get(k, ZERO) for k in range(rank + 1))
    if coeffs[-1].is_zero():
        raise ZeroLeadingCoefficientError(f"leading coefficient of d^{rank} is zero", 1, 1)
    rhs_expr = rhs if isinstance(rhs, Expr) else parse_expr(rhs, params)
    return ScalarOperator(coeffs, rhs_expr, dict(params or {}))


def serialize_operator(op: ScalarOperator) -> str:
    return op.to_text()


def apply_operator(op: ScalarOperator, f_jet: Jet, t):
    """Raw ``(L f)(t)`` from a jet of ``f`` (``b`` is not subtracted)."""
    if f_jet.order < op.rank:
        raise ValueError(f"jet order {f_jet.order} is below the operator rank {op.rank}")
    derivs = f_jet.coeffs
    total = None
    for k, c in enumerate(op.coeffs):
        if c.is_zero():
            continue
        term = evaluate(c, t, f_jet.kit) * derivs[k]
        total = term if total is None else total + term
    return total


def apply_to_expr(op: ScalarOperator, e: Expr, t, kit=None):
    """``(L e)(t)`` for an expression ``e``, derivatives by jets."""
    kit = kit if kit is not None else get_precision(16)
    jet = evaluate(e, Jet.variable(t, op.rank, kit), kit)
    return apply_operator(op, jet, t)


# ---------------------------------------------------------------------------
# first-order systems


def _is_zero_row(row) -> bool:
    return all(e.is_zero() for e in row)


@dataclass(frozen=True)
class FirstOrderSystem:
    """``F' = P(t) F + B(t)`` with expression entries."""

    P: tuple
    B: tuple
    singular_points: tuple = ()

    def __post_init__(self):
        r = len(self.P)
        if any(len(row) != r for row in self.P) or len(self.B) != r:
            raise ValueError("P must be square and B must match its size")

    @classmethod
    def from_lists(cls, P, B=None, singular_points=(), params=None) -> "FirstOrderSystem":
        def conv(x):
            return x if isinstance(x, Expr) else parse_expr(str(x), params)

        P = tuple(tuple(conv(x) for x in row) for row in P)
        B = tuple(conv(x) for x in B) if B is not None else tuple(ZERO for _ in P)
        return cls(P, B, tuple(singular_points))

    @property
    def dim(self) -> int:
        return len(self.P)

    @property
    def is_homogeneous(self) -> bool:
        return _is_zero_row(self.B)

    @property
    def is_autonomous(self) -> bool:
        return not any(e.depends_on_t() for row in self.P for e in row) and not any(
            e.depends_on_t() for e in self.B
        )

    def augmented(self) -> "FirstOrderSystem":
        """Homogeneous system of size r+1 whose last state component stays 1."""
        r = self.dim
        rows = [tuple(self.P[i]) + (self.B[i],) for i in range(r)]
        rows.append(tuple(ZERO for _ in range(r + 1)))
        return FirstOrderSystem(tuple(rows), tuple(ZERO for _ in range(r + 1)), self.singular_points)

    def _check_declared(self, t):
        for s in self.singular_points:
            if t == s:
                raise SingularPointError(t, "declared singular point")

    def matrix(self, t, prec: Precision | None = None) -> np.ndarray:
        prec = as_precision(prec)
        t = prec.real(t) if not isinstance(t, Jet) else t
        self._check_declared(t if not isinstance(t, Jet) else t.value)
        out = np.empty((self.dim, self.dim), dtype=object if isinstance(t, Jet) else prec.dtype)
        for i, row in enumerate(self.P):
            for j, e in enumerate(row):
                out[i, j] = _checked(evaluate(e, t, prec), t, prec)
        return out

    def vector(self, t, prec: Precision | None = None) -> np.ndarray:
        prec = as_precision(prec)
        t = prec.real(t) if not isinstance(t, Jet) else t
        out = np.empty(self.dim, dtype=object if isinstance(t, Jet) else prec.dtype)
        for i, e in enumerate(self.B):
            out[i] = _checked(evaluate(e, t, prec), t, prec)
        return out

    def batch(self, ts, kit) -> "np.ndarray | DD":
        """``P`` at every entry of the kit array ``ts``: shape ``(n, r, r)``."""
        n = ts.shape[0]
        r = self.dim
        for s in self.singular_points:
            _declared_hit(ts, s, kit)
        entries = [[_batch_entry(e, ts, kit, n) for e in row] for row in self.P]
        if isinstance(ts, DD):
            hi = np.empty((n, r, r))
            lo = np.empty((n, r, r))
            for i in range(r):
                for j in range(r):
                    hi[:, i, j] = entries[i][j].hi
                    lo[:, i, j] = entries[i][j].lo
            return DD(hi, lo)
        out = np.empty((n, r, r), dtype=ts.dtype)
        for i in range(r):
            for j in range(r):
                out[:, i, j] = entries[i][j]
        return out


def _checked(value, t, prec):
    if isinstance(value, Jet):
        return value
    if not prec.isfinite(value):
        raise SingularPointError(t, "coefficient is not finite")
    return value


def _declared_hit(ts, s, kit):
    vals = ts.hi if isinstance(ts, DD) else ts
    for v in vals:
        if v == s:
            raise SingularPointError(s, "declared singular point")


def _batch_entry(e: Expr, ts, kit, n):
    if e.is_zero():
        return ts * 0
    try:
        value = evaluate(e, ts, kit)
    except SingularPointError:
        # locate the offending node
        for i in range(n):
            try:
                evaluate(e, ts[i], kit)
            except SingularPointError:
                raise SingularPointError(_node_value(ts, i)) from None
        raise
    ok = kit.isfinite(value)
    if not np.all(ok):
        i = int(np.flatnonzero(~np.asarray(ok, dtype=bool))[0])
        raise SingularPointError(_node_value(ts, i), "coefficient is not finite")
    return value


def _node_value(ts, i):
    return float(ts.hi[i]) if isinstance(ts, DD) else ts[i]


def companion_system(op: ScalarOperator) -> FirstOrderSystem:
    """First-order system for ``(f, f', ..., f^(r-1))``."""
    r = op.rank
    lead = op.coeffs[-1]
    rows = []
    for i in range(r - 1):
        rows.append(tuple(ONE if j == i + 1 else ZERO for j in range(r)))
    rows.append(tuple(neg(div(op.coeffs[j], lead)) for j in range(r)))
    B = tuple(ZERO for _ in range(r - 1)) + (div(op.rhs, lead),)
    return FirstOrderSystem(tuple(rows), B)


def gauge_transform(system: FirstOrderSystem, alpha=0, beta=0) -> FirstOrderSystem:
    """Substitute ``F = g G`` with ``g(t) = exp(alpha t) t^beta``.

    The new matrix is ``P - (alpha + beta/t) I``; a nonzero ``B`` is scaled by
    ``1/g``.
    """
    alpha = to_fraction(alpha)
    beta = to_fraction(beta)
    shift = add(Num(alpha), div(Num(beta), T)) if beta != 0 else Num(alpha)
    r = system.dim
    P = tuple(
        tuple(sub(e, shift) if i == j else e for j, e in enumerate(row)) for i, row in enumerate(system.P)
    )
    if system.is_homogeneous or (alpha == 0 and beta == 0):
        B = system.B
    else:
        inv_g = mul(call("exp", mul(Num(-alpha), T)), power(T, -beta))
        B = tuple(mul(b, inv_g) for b in system.B)
    sing = tuple(system.singular_points)
    if beta != 0 and 0 not in sing:
        sing = sing + (0,)
    return FirstOrderSystem(P, B, sing)


# ---------------------------------------------------------------------------
# grids and data


@dataclass(frozen=True)
class Grid:
    """Uniform nodes ``t_i = t_start + i h`` for ``i = 0..N`` (never accumulated)."""

    t_start: Fraction
    h: Fraction
    N: int

    def __post_init__(self):
        object.__setattr__(self, "t_start", to_fraction(self.t_start))
        object.__setattr__(self, "h", to_fraction(self.h))
        if self.N < 0:
            raise ValueError("grid needs N >= 0")
        if self.h <= 0 and self.N > 0:
            raise ValueError("grid step must be positive")

    @classmethod
    def over(cls, a, b, N: int) -> "Grid":
        a, b = to_fraction(a), to_fraction(b)
        return cls(a, (b - a) / N, N)

    @property
    def t_end(self) -> Fraction:
        return self.t_start + self.N * self.h

    def node(self, i: int) -> Fraction:
        return self.t_start + i * self.h

    def nodes(self, prec: Precision | None = None) -> np.ndarray:
        prec = as_precision(prec)
        if prec.native:
            return float(self.t_start) + np.arange(self.N + 1) * float(self.h)
        h = prec.real(self.h)
        t0 = prec.real(self.t_start)
        return prec.array([t0 + i * h for i in range(self.N + 1)])

    def index_of(self, p) -> int | None:
        """Index of the node equal to ``p``, or ``None`` when off-grid."""
        p = to_fraction(p)
        k = (p - self.t_start) / self.h
        if k.denominator == 1 and 0 <= k <= self.N:
            return int(k)
        return None


@dataclass(frozen=True)
class DataPoint:
    p: object
    q: object
    deriv_order: int = 0


# ---------------------------------------------------------------------------
# problem files


@dataclass
class Problem:
    """Contents of a problem file."""

    operator: ScalarOperator | None
    system: FirstOrderSystem | None
    interval: tuple
    params: dict
    extras: dict

    def first_order(self) -> FirstOrderSystem:
        if self.system is not None:
            return self.system
        return companion_system(self.operator)


def load_problem(source) -> Problem:
    """Read a problem from a JSON path, JSON text, or an already parsed dict.

    Recognized keys: ``operator``, ``rhs``, ``params``, ``interval``; optional
    ``system`` (matrix ``P`` and vector ``B`` of expression strings, used
    instead of the companion form), ``gauge`` (``alpha``/``beta``) and free-form
    extras such as ``initial``, ``data`` and ``oracle``.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
        doc = json.loads(text)
    params = {k: to_fraction(v) for k, v in doc.get("params", {}).items()}
    op = None
    system = None
    if "operator" in doc:
        op = parse_operator(doc["operator"], params, doc.get("rhs", "0"))
    if "system" in doc:
        spec = doc["system"]
        system = FirstOrderSystem.from_lists(spec["P"], spec.get("B"), params=params)
    if op is None and system is None:
        raise ValueError("problem needs an 'operator' or a 'system'")
    if "gauge" in doc:
        g = doc["gauge"]
        base = system if system is not None else companion_system(op)
        system = gauge_transform(base, to_fraction(g.get("alpha", 0)), to_fraction(g.get("beta", 0)))
    interval = tuple(to_fraction(x) for x in doc.get("interval", (0, 1)))
    known = {"operator", "rhs", "params", "interval", "system", "gauge"}
    extras = {k: v for k, v in doc.items() if k not in known}
    return Problem(op, system, interval, params, extras)
