"""Precision contexts.

A :class:`Precision` fixes the number of significant decimal digits ``D`` of a
computation.  ``D <= 16`` runs on native binary64 numbers and float64 arrays.
Larger ``D`` uses ``mpmath`` numbers from a private context, stored in numpy
object arrays so the same array code works at any precision.

Each context also exposes a *kit*: the backend used by vectorized hot loops
(propagator assembly, batched products).  For ``16 < D <= 31`` the kit is the
double-double array type from :mod:`hgmode.ddarray`; otherwise it is the
context itself.
"""
from __future__ import annotations

import functools
import math
from fractions import Fraction
from numbers import Rational

import mpmath
import numpy as np

from .ddarray import DD, dd_matmul

NATIVE_DIGITS = 16
DD_DIGITS = 31


class PrecisionMismatchError(ValueError):
    """Raised when values from two different precision contexts are mixed."""


class DomainError(ArithmeticError):
    """Raised when an elementary function leaves the real domain."""


class Precision:
    """Arithmetic context with ``digits`` significant decimal digits.

    Use :func:`get_precision` to obtain shared instances; two contexts with
    the same digits created separately are still distinct and must not be
    mixed.
    """

    def __init__(self, digits: int = 16):
        digits = int(digits)
        if digits < 15:
            raise ValueError(f"precision must be at least 15 digits, got {digits}")
        self.digits = digits
        self.native = digits <= NATIVE_DIGITS
        if self.native:
            self.mp = None
        else:
            self.mp = mpmath.MPContext()
            self.mp.dps = digits
            self._sqrt = np.frompyfunc(self._mp_sqrt, 1, 1)
            self._exp = np.frompyfunc(self.mp.exp, 1, 1)
            self._log = np.frompyfunc(self._mp_log, 1, 1)
            self._isfinite = np.frompyfunc(self.mp.isfinite, 1, 1)
        self.dtype = np.float64 if self.native else object

    def __repr__(self):
        return f"Precision({self.digits})"

    # tolerances ------------------------------------------------------
    def tol(self, k: float) -> float:
        """Return ``10**(k - D)`` as a float."""
        return 10.0 ** (k - self.digits)

    @property
    def eps(self) -> float:
        return self.tol(1)

    # scalars ---------------------------------------------------------
    def real(self, x):
        """Convert ``x`` to a scalar of this context."""
        if self.native:
            if isinstance(x, Rational):
                return float(Fraction(x))
            if isinstance(x, str):
                return float(Fraction(x)) if "/" in x else float(x)
            return float(x)
        if isinstance(x, mpmath.ctx_mp_python._mpf):
            if x.context is not self.mp:
                raise PrecisionMismatchError("value belongs to a different precision context")
            return x
        if isinstance(x, Fraction):
            return self.mp.mpf(x.numerator) / x.denominator
        if isinstance(x, str) and "/" in x:
            return self.real(Fraction(x))
        if isinstance(x, (float, np.floating)):
            return self.mp.mpf(float(x))
        return self.mp.mpf(x)

    def adopt(self, x):
        """Convert a number from any context, rounding to this one."""
        if self.native:
            return float(x)
        if isinstance(x, mpmath.ctx_mp_python._mpf):
            return self.mp.mpf(x._mpf_) if x.context is not self.mp else x
        return self.real(x)

    const = real

    @functools.cached_property
    def pi(self):
        return math.pi if self.native else +self.mp.pi

    def to_float(self, x):
        if isinstance(x, np.ndarray):
            return x.astype(np.float64)
        return float(x)

    def format(self, x) -> str:
        if self.native:
            return repr(float(x))
        return self.mp.nstr(x, self.digits, min_fixed=-5, max_fixed=self.digits + 1)

    # arrays ----------------------------------------------------------
    def array(self, values) -> np.ndarray:
        if self.native:
            return np.array(values, dtype=np.float64)
        raw = np.asarray(values, dtype=object)
        out = np.empty(raw.shape, dtype=object)
        flat = out.reshape(-1)
        for i, v in enumerate(raw.reshape(-1)):
            flat[i] = self.adopt(v) if isinstance(v, mpmath.ctx_mp_python._mpf) else self.real(v)
        return out

    def zeros(self, shape) -> np.ndarray:
        if self.native:
            return np.zeros(shape)
        out = np.empty(shape, dtype=object)
        out.fill(self.mp.zero)
        return out

    def eye(self, n: int) -> np.ndarray:
        out = self.zeros((n, n))
        for i in range(n):
            out[i, i] = self.real(1)
        return out

    def arange(self, n: int) -> np.ndarray:
        return self.array(np.arange(n))

    # elementary functions (scalar or array) --------------------------
    def _mp_sqrt(self, x):
        if x < 0:
            raise DomainError("square root of a negative number")
        return self.mp.sqrt(x)

    def _mp_log(self, x):
        if x <= 0:
            raise DomainError("logarithm of a non-positive number")
        return self.mp.log(x)

    def sqrt(self, x):
        if getattr(x, "owns_elementary", False):
            return x.sqrt()
        if self.native:
            return np.sqrt(x)
        return self._sqrt(x)

    def exp(self, x):
        if getattr(x, "owns_elementary", False):
            return x.exp()
        if self.native:
            return np.exp(x)
        return self._exp(x)

    def log(self, x):
        if getattr(x, "owns_elementary", False):
            return x.log()
        if self.native:
            return np.log(x)
        return self._log(x)

    def isfinite(self, x):
        if self.native:
            return np.isfinite(x)
        if isinstance(x, np.ndarray):
            return self._isfinite(x).astype(bool)
        return bool(self.mp.isfinite(x))

    # kit protocol ----------------------------------------------------
    @functools.cached_property
    def kit(self) -> "Precision | DDKit":
        """Backend used by vectorized hot loops."""
        if NATIVE_DIGITS < self.digits <= DD_DIGITS:
            return DDKit(self)
        return self

    def asarray(self, values):
        return values if isinstance(values, np.ndarray) and values.dtype == self.dtype else self.array(values)

    def from_prec(self, arr):
        return arr

    def to_prec(self, arr):
        return arr

    @staticmethod
    def matmul(a, b):
        return np.matmul(a, b)


class DDKit:
    """Double-double backend tied to an extended-precision context."""

    def __init__(self, prec: Precision):
        self.prec = prec
        self.digits = prec.digits
        self.native = False

    def __repr__(self):
        return f"DDKit({self.digits})"

    def const(self, x):
        if isinstance(x, Fraction):
            return DD.from_mpf(self.prec.real(x))
        if isinstance(x, DD):
            return x
        return DD.from_mpf(self.prec.adopt(x))

    real = const

    def from_prec(self, arr) -> DD:
        return DD.from_mpf(arr)

    def to_prec(self, x: DD) -> np.ndarray:
        return x.to_mpf(self.prec.mp)

    def asarray(self, values) -> DD:
        if isinstance(values, DD):
            return values
        if isinstance(values, np.ndarray) and values.dtype == np.float64:
            return DD(values)
        return DD.from_mpf(self.prec.array(values))

    @staticmethod
    def zeros(shape) -> DD:
        return DD(np.zeros(shape))

    @staticmethod
    def eye(n: int) -> DD:
        return DD(np.eye(n))

    def sqrt(self, x):
        return x.sqrt()

    def exp(self, x):
        return x.exp()

    def log(self, x):
        return x.log()

    @staticmethod
    def isfinite(x):
        return x.isfinite() if isinstance(x, DD) else np.isfinite(x)

    @staticmethod
    def matmul(a, b):
        return dd_matmul(a, b)


@functools.lru_cache(maxsize=None)
def get_precision(digits: int = 16) -> Precision:
    """Shared context for ``digits`` decimal digits."""
    return Precision(digits)


def as_precision(prec: "Precision | int | None") -> Precision:
    if prec is None:
        return get_precision(16)
    if isinstance(prec, Precision):
        return prec
    return get_precision(int(prec))
