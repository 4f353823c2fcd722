"""Truncated Taylor arithmetic.

A :class:`Jet` of order ``r`` carries ``f(t), f'(t), ..., f^(r)(t)``.  Internally
the normalized Taylor coefficients ``f^(k)(t)/k!`` are stored, so products are
Cauchy convolutions (equivalent to the Leibniz rule) and the elementary
functions follow the usual power-series recurrences.

Coefficients may be scalars or arrays of any backend (float64, object arrays of
extended-precision numbers, double-double arrays), which lets one jet evaluate
a function at many points at once.
"""
from __future__ import annotations

from fractions import Fraction
from math import factorial

from .precision import Precision, PrecisionMismatchError, get_precision


class Jet:
    owns_elementary = True
    __array_priority__ = 200

    __slots__ = ("_taylor", "kit")

    def __init__(self, taylor, kit: Precision | None = None):
        self._taylor = list(taylor)
        self.kit = kit if kit is not None else get_precision(16)

    # constructors ----------------------------------------------------
    @classmethod
    def from_derivatives(cls, coeffs, kit=None) -> "Jet":
        """Build a jet from ``f, f', ..., f^(r)``."""
        return cls([c / factorial(k) if k > 1 else c for k, c in enumerate(coeffs)], kit)

    @classmethod
    def variable(cls, t, order: int, kit=None) -> "Jet":
        """Jet of the identity function at ``t``."""
        kit = kit if kit is not None else get_precision(16)
        zero = t * 0
        taylor = [t] + [zero + 1] * min(order, 1) + [zero] * max(order - 1, 0)
        return cls(taylor, kit)

    @classmethod
    def constant(cls, c, order: int, kit=None) -> "Jet":
        zero = c * 0
        return cls([c] + [zero] * order, kit)

    # accessors -------------------------------------------------------
    @property
    def order(self) -> int:
        return len(self._taylor) - 1

    @property
    def coeffs(self) -> list:
        """Derivatives ``f^(k)(t)`` for ``k = 0..order``."""
        return [c * factorial(k) if k > 1 else c for k, c in enumerate(self._taylor)]

    @property
    def taylor(self) -> list:
        return list(self._taylor)

    @property
    def value(self):
        return self._taylor[0]

    def __len__(self):
        return len(self._taylor)

    def __repr__(self):
        return f"Jet(order={self.order}, coeffs={self.coeffs!r})"

    # helpers ---------------------------------------------------------
    def _check(self, other: "Jet"):
        if other.order != self.order:
            raise ValueError(f"jet order mismatch: {self.order} vs {other.order}")
        if other.kit.digits != self.kit.digits:
            raise PrecisionMismatchError(f"jets at {self.kit.digits} and {other.kit.digits} digits")

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            self._check(other)
            return other
        if isinstance(other, Fraction):
            other = self.kit.const(other)
        return Jet.constant(other, self.order, self.kit)

    def _new(self, taylor) -> "Jet":
        return Jet(taylor, self.kit)

    # arithmetic ------------------------------------------------------
    def __neg__(self):
        return self._new([-a for a in self._taylor])

    def __pos__(self):
        return self

    def __add__(self, other):
        if not isinstance(other, Jet):
            if isinstance(other, Fraction):
                other = self.kit.const(other)
            return self._new([self._taylor[0] + other] + self._taylor[1:])
        self._check(other)
        return self._new([a + b for a, b in zip(self._taylor, other._taylor)])

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            if isinstance(other, Fraction):
                other = self.kit.const(other)
            return self._new([a * other for a in self._taylor])
        self._check(other)
        a, b = self._taylor, other._taylor
        return self._new([_dot(a, b, k) for k in range(len(a))])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            if isinstance(other, Fraction):
                other = self.kit.const(other)
            return self._new([a / other for a in self._taylor])
        self._check(other)
        a, b = self._taylor, other._taylor
        c = []
        for k in range(len(a)):
            acc = a[k]
            for j in range(1, k + 1):
                acc = acc - b[j] * c[k - j]
            c.append(acc / b[0])
        return self._new(c)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, n):
        if isinstance(n, Fraction) and n.denominator == 1:
            n = n.numerator
        if not isinstance(n, int):
            return (self.log() * n).exp()
        if n < 0:
            return 1 / (self ** (-n))
        result = None
        base = self
        while n:
            if n & 1:
                result = base if result is None else result * base
            n >>= 1
            if n:
                base = base * base
        return result if result is not None else self._lift(self._taylor[0] * 0 + 1)

    # elementary functions --------------------------------------------
    def exp(self) -> "Jet":
        a = self._taylor
        e = [self.kit.exp(a[0])]
        for k in range(1, len(a)):
            acc = a[1] * e[k - 1]
            for j in range(2, k + 1):
                acc = acc + a[j] * e[k - j] * j
            e.append(acc / k)
        return self._new(e)

    def log(self) -> "Jet":
        a = self._taylor
        out = [self.kit.log(a[0])]
        for k in range(1, len(a)):
            acc = a[k] * k
            for j in range(1, k):
                acc = acc - out[j] * a[k - j] * j
            out.append(acc / (a[0] * k))
        return self._new(out)

    def sqrt(self) -> "Jet":
        a = self._taylor
        s = [self.kit.sqrt(a[0])]
        for k in range(1, len(a)):
            acc = a[k]
            for j in range(1, k):
                acc = acc - s[j] * s[k - j]
            s.append(acc / (s[0] * 2))
        return self._new(s)


def _dot(a, b, k):
    acc = a[0] * b[k]
    for i in range(1, k + 1):
        acc = acc + a[i] * b[k - i]
    return acc


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Product of two jets of equal order (Leibniz rule)."""
    return a * b
