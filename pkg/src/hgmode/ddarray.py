"""Vectorized double-double arithmetic on numpy arrays.

A value is stored as an unevaluated sum ``hi + lo`` of two binary64 arrays with
``|lo| <= ulp(hi)/2``, which gives roughly 31 significant decimal digits.  The
error-free transformations are the classical ones of Dekker and Knuth; the
algorithms follow the QD library of Hida, Li and Bailey.

Only what the stepper hot paths need is implemented: the four operations,
integer powers, ``sqrt``, ``exp``, ``log`` and batched matrix products.
"""
from __future__ import annotations

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


class DD:
    """Array of double-double numbers."""

    __slots__ = ("hi", "lo")
    owns_elementary = True
    __array_priority__ = 100  # keep numpy from broadcasting over us

    def __init__(self, hi, lo=None):
        self.hi = np.asarray(hi, dtype=np.float64)
        self.lo = np.zeros_like(self.hi) if lo is None else np.asarray(lo, dtype=np.float64)

    # construction -----------------------------------------------------
    @classmethod
    def from_mpf(cls, values) -> "DD":
        """Round extended-precision scalars (or an object array of them)."""
        arr = np.asarray(values, dtype=object)
        hi = np.vectorize(float, otypes=[np.float64])(arr) if arr.size else np.zeros(arr.shape)
        lo = np.vectorize(lambda x, h: float(x - h), otypes=[np.float64])(arr, hi) if arr.size else np.zeros(arr.shape)
        return cls(hi, lo)

    def to_mpf(self, ctx) -> np.ndarray:
        out = np.empty(self.hi.shape, dtype=object)
        flat = out.reshape(-1)
        for i, (h, l) in enumerate(zip(self.hi.reshape(-1), self.lo.reshape(-1))):
            flat[i] = ctx.mpf(float(h)) + ctx.mpf(float(l))
        return out

    # container protocol ----------------------------------------------
    @property
    def shape(self):
        return self.hi.shape

    @property
    def ndim(self):
        return self.hi.ndim

    def __len__(self):
        return len(self.hi)

    def __getitem__(self, idx):
        return DD(self.hi[idx], self.lo[idx])

    def __setitem__(self, idx, value):
        value = _coerce(value)
        self.hi[idx] = value.hi
        self.lo[idx] = value.lo

    def copy(self):
        return DD(self.hi.copy(), self.lo.copy())

    def reshape(self, *shape):
        return DD(self.hi.reshape(*shape), self.lo.reshape(*shape))

    def swapaxes(self, a, b):
        return DD(self.hi.swapaxes(a, b), self.lo.swapaxes(a, b))

    def __repr__(self):
        return f"DD({self.hi!r}, {self.lo!r})"

    def __float__(self):
        return float(self.hi)

    # arithmetic ------------------------------------------------------
    def __neg__(self):
        return DD(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __abs__(self):
        sign = np.where(self.hi < 0, -1.0, 1.0)
        return DD(sign * self.hi, sign * self.lo)

    def __add__(self, other):
        if not isinstance(other, DD):
            other = np.asarray(other, dtype=np.float64)
            s, e = _two_sum(self.hi, other)
            return DD(*_quick_two_sum(s, e + self.lo))
        s, e = _two_sum(self.hi, other.hi)
        t, f = _two_sum(self.lo, other.lo)
        s, e = _quick_two_sum(s, e + t)
        return DD(*_quick_two_sum(s, e + f))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) + (-self)

    def __mul__(self, other):
        if not isinstance(other, DD):
            other = np.asarray(other, dtype=np.float64)
            p, e = _two_prod(self.hi, other)
            return DD(*_quick_two_sum(p, e + self.lo * other))
        p, e = _two_prod(self.hi, other.hi)
        e = e + (self.hi * other.lo + self.lo * other.hi)
        return DD(*_quick_two_sum(p, e))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        q1 = self.hi / other.hi
        r = self - other * q1
        q2 = r.hi / other.hi
        r = r - other * q2
        q3 = r.hi / other.hi
        return DD(*_quick_two_sum(q1, q2)) + q3

    def __rtruediv__(self, other):
        return _coerce(other) / self

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)):
            return (self.log() * float(k)).exp()
        k = int(k)
        if k < 0:
            return 1.0 / (self ** (-k))
        result = DD(np.ones_like(self.hi))
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    # elementary functions ----------------------------------------------
    def sqrt(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.sqrt(self.hi)
            p, e = _two_prod(x, x)
            r = (self - DD(p, e)).hi
            corr = np.where(x > 0, r / (2.0 * x), 0.0)
        return DD(*_two_sum(x, corr))

    def exp(self):
        k = np.round(self.hi / _LN2.hi)
        r = self - _LN2 * k
        # scale down so the Taylor series converges fast, square back afterwards
        r = DD(np.ldexp(r.hi, -10), np.ldexp(r.lo, -10))
        term = r
        total = r
        for n in range(2, 14):
            term = term * r / float(n)
            total = total + term
        # exp(r) - 1 kept separate to avoid cancellation while squaring
        for _ in range(10):
            total = total * total + total * 2.0
        total = total + 1.0
        kk = k.astype(np.int64) if np.ndim(k) else int(k)
        with np.errstate(over="ignore", invalid="ignore"):
            return DD(np.ldexp(total.hi, kk), np.ldexp(total.lo, kk))

    def log(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.log(self.hi)
            # one Newton step on exp(y) = x doubles the number of correct digits
            return DD(y) + self * DD(-y).exp() - 1.0

    def isfinite(self):
        return np.isfinite(self.hi) & np.isfinite(self.lo)


def _coerce(x) -> DD:
    return x if isinstance(x, DD) else DD(x)


_LN2 = DD(0.6931471805599453, 2.3190468138462996e-17)


def dd_matmul(a: DD, b: DD) -> DD:
    """Batched matrix product over the last two axes."""
    n = a.shape[-1]
    acc = None
    for k in range(n):
        term = a[..., :, k : k + 1] * b[..., k : k + 1, :]
        acc = term if acc is None else acc + term
    return acc


def dd_stack(items, axis=0) -> DD:
    items = [_coerce(x) for x in items]
    return DD(np.stack([x.hi for x in items], axis=axis), np.stack([x.lo for x in items], axis=axis))
