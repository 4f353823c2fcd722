"""Independent oracles and the example problems used throughout the package.

Airy functions come from their Maclaurin series evaluated at raised working
precision.  ``H^k_n(x, y) = int_0^x t^k e^(-t) 0F1(; n; y t) dt`` is computed by
adaptive quadrature of a hand-summed 0F1 series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np

from .expr import T, Expr, Num, call, evaluate, mul, power, to_fraction, to_text
from .jet import Jet
from .operators import FirstOrderSystem, ScalarOperator, companion_system, gauge_transform, parse_operator
from .precision import Precision, as_precision

AIRY_RANGE = 40


class OracleRangeError(ValueError):
    pass


class QuadratureError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Airy


def airy_work_digits(t, digits: int) -> int:
    """Working digits for the Maclaurin series at ``t``.

    Terms grow like ``exp(2/3 |t|^1.5)`` while ``Ai`` decays like its inverse
    for ``t > 0``, so up to ``(4/3)|t|^1.5 / ln 10`` digits cancel.
    """
    return digits + 10 + math.ceil(0.6 * abs(float(t)) ** 1.5)


@lru_cache(maxsize=None)
def _airy_origin(work: int):
    ctx = mpmath.MPContext()
    ctx.dps = work
    c1 = 1 / (ctx.cbrt(3) ** 2 * ctx.gamma(ctx.mpf(2) / 3))
    c2 = 1 / (ctx.cbrt(3) * ctx.gamma(ctx.mpf(1) / 3))
    return ctx, c1, c2


def _airy_series(t, a0, a1, ctx, tol):
    """Sum ``y = sum a_n t^n`` with ``y'' = t y`` and return ``(y, y')``.

    ``t`` may be a context number or a :class:`Jet` over the context.
    """
    a = [a0, a1]
    tp = [t * 0 + 1, t]  # t^0, t^1
    y = a0 + a1 * t
    dy = t * 0 + a1
    n = 2
    quiet = 0
    while True:
        # a_{n} = a_{n-3} / (n (n-1))
        an = a[n - 3] / (n * (n - 1)) if n >= 3 else ctx.zero
        a.append(an)
        tp.append(tp[-1] * t)
        term = an * tp[n]
        dterm = an * n * tp[n - 1]
        y = y + term
        dy = dy + dterm
        size = abs(term.value if isinstance(term, Jet) else term) + abs(dterm.value if isinstance(dterm, Jet) else dterm)
        ref = abs(y.value if isinstance(y, Jet) else y) + abs(dy.value if isinstance(dy, Jet) else dy)
        quiet = quiet + 1 if size <= tol * ref else 0
        if quiet >= 3 and n > 3 * abs(t.value if isinstance(t, Jet) else t) ** 1.5:
            return y, dy
        n += 1


def _airy_pair(t, kind: str, prec: Precision):
    t = to_fraction(t)
    if abs(t) > AIRY_RANGE:
        raise OracleRangeError(f"Airy oracle is validated for |t| <= {AIRY_RANGE}, got {float(t)}")
    work = airy_work_digits(t, prec.digits)
    ctx, c1, c2 = _airy_origin(work)
    tt = ctx.mpf(t.numerator) / t.denominator
    tol = ctx.mpf(10) ** (-work - 5)
    if kind == "ai":
        y, dy = _airy_series(tt, c1, -c2, ctx, tol)
    else:
        s3 = ctx.sqrt(3)
        y, dy = _airy_series(tt, s3 * c1, s3 * c2, ctx, tol)
    return prec.adopt(y), prec.adopt(dy)


def airy_ai(t, prec: Precision | int | None = None):
    return _airy_pair(t, "ai", as_precision(prec))[0]


def airy_ai_prime(t, prec: Precision | int | None = None):
    return _airy_pair(t, "ai", as_precision(prec))[1]


def airy_bi(t, prec: Precision | int | None = None):
    return _airy_pair(t, "bi", as_precision(prec))[0]


def airy_bi_prime(t, prec: Precision | int | None = None):
    return _airy_pair(t, "bi", as_precision(prec))[1]


def airy_ai_pair(t, prec: Precision | int | None = None):
    """``(Ai(t), Ai'(t))``."""
    return _airy_pair(t, "ai", as_precision(prec))


def airy_ai_jet(t, order: int, prec: Precision | int | None = None) -> Jet:
    """Jet of ``Ai`` at ``t`` obtained by pushing a jet through the series.

    The result lives in the working precision context of the series, which
    makes it an independent check of ``y'' = t y``.
    """
    prec = as_precision(prec)
    t = to_fraction(t)
    work = airy_work_digits(t, prec.digits)
    ctx, c1, c2 = _airy_origin(work)
    kit = _WorkKit(ctx)
    tt = Jet.variable(ctx.mpf(t.numerator) / t.denominator, order, kit)
    y, _ = _airy_series(tt, c1, -c2, ctx, ctx.mpf(10) ** (-work - 5))
    return y


class _WorkKit:
    """Minimal jet backend over a bare mpmath context."""

    native = False

    def __init__(self, ctx):
        self.mp = ctx
        self.digits = ctx.dps

    def const(self, x):
        x = Fraction(x)
        return self.mp.mpf(x.numerator) / x.denominator

    real = const

    def sqrt(self, x):
        return self.mp.sqrt(x)

    def exp(self, x):
        return self.mp.exp(x)

    def log(self, x):
        return self.mp.log(x)


def airy_ai_array(ts, prec: Precision | int | None = None) -> np.ndarray:
    prec = as_precision(prec)
    return prec.array([airy_ai(t, prec) for t in np.ravel(ts)]).reshape(np.shape(ts))


# ---------------------------------------------------------------------------
# 0F1 and H^k_n


def _check_pochhammer(n):
    if Fraction(n) <= 0 and Fraction(n).denominator == 1:
        raise ValueError(f"0F1 parameter {n} is a pole of the Pochhammer symbol")


def hyp0f1(n, z, prec: Precision | int | None = None):
    """``sum_j z^j / ((n)_j j!)`` summed until terms drop below ``10^(-D-5)``."""
    prec = as_precision(prec)
    _check_pochhammer(n)
    if prec.native:
        return float(_hyp0f1_array(float(n), np.array([float(z)]), 1e-21)[0])
    return _hyp0f1_mp(prec.mp, prec.real(to_fraction(n)), prec.real(z), prec.digits)


def _hyp0f1_mp(ctx, n, z, digits):
    tol = ctx.mpf(10) ** (-digits - 5)
    term = ctx.one
    total = ctx.one
    j = 0
    while True:
        term = term * z / ((n + j) * (j + 1))
        total += term
        j += 1
        if abs(term) <= tol * abs(total) and j * j > abs(z):
            return total


def _hyp0f1_array(n: float, z: np.ndarray, tol: float) -> np.ndarray:
    term = np.ones_like(z)
    total = np.ones_like(z)
    j = 0
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    while True:
        term = term * z / ((n + j) * (j + 1))
        total = total + term
        j += 1
        if j * j > zmax and np.all(np.abs(term) <= tol * np.abs(total)):
            return total


# Gauss-Kronrod 7/15 nodes on [-1, 1]
_XK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_X15 = np.concatenate([-_XK[:-1], _XK[::-1]])
_W15 = np.concatenate([_WK[:-1], _WK[::-1]])
_W7 = np.zeros(15)
_W7[1:14:2] = np.concatenate([_WG[:-1], _WG[::-1]])


def gauss_kronrod(f, a: float, b: float, rtol: float = 1e-13, max_intervals: int = 4000) -> tuple[float, float]:
    """Globally adaptive G7K15 quadrature; ``f`` is evaluated on node arrays.

    Returns ``(value, error_estimate)``.
    """
    intervals = [(a, b)]
    done_val = 0.0
    done_err = 0.0
    while True:
        lo = np.array([iv[0] for iv in intervals])
        hi = np.array([iv[1] for iv in intervals])
        mid = (lo + hi) / 2
        half = (hi - lo) / 2
        x = mid[:, None] + half[:, None] * _X15[None, :]
        fx = f(x.ravel()).reshape(x.shape)
        k = half * (fx @ _W15)
        g = half * (fx @ _W7)
        err = np.abs(k - g)
        total = done_val + k.sum()
        budget = rtol * abs(total)
        if done_err + err.sum() <= budget or not np.isfinite(total):
            if not np.isfinite(total):
                raise QuadratureError("integrand is not finite")
            return float(total), float(done_err + err.sum())
        # accept intervals whose share of the error is negligible
        share = budget / len(intervals) / 4
        keep = []
        for i in range(len(intervals)):
            if err[i] <= share:
                done_val += k[i]
                done_err += err[i]
            else:
                keep.append(i)
        if len(intervals) + len(keep) > max_intervals:
            raise QuadratureError(f"no convergence within {max_intervals} subintervals")
        intervals = [piece for i in keep for piece in ((lo[i], mid[i]), (mid[i], hi[i]))]


def hkn_value(k, n, x, y, prec: Precision | int | None = None, deriv: int = 0, rtol: float = 1e-13):
    """``d^m/dy^m H^k_n(x, y)`` for ``m = deriv`` by quadrature.

    Differentiating under the integral sign gives
    ``int_0^x t^(k+m) e^(-t) 0F1(; n+m; y t) dt / (n)_m``.
    """
    prec = as_precision(prec)
    if not x > 0:
        raise ValueError("hkn_value needs x > 0")
    _check_pochhammer(n)
    m = deriv
    km = to_fraction(k) + m
    nm = to_fraction(n) + m
    poch = math.prod(to_fraction(n) + i for i in range(m))
    if prec.native:
        kf, nf, yf = float(km), float(nm), float(y)

        def f(t):
            return t**kf * np.exp(-t) * _hyp0f1_array(nf, yf * t, 1e-17)

        val, _ = gauss_kronrod(f, 0.0, float(x), rtol)
        return val / float(poch)
    ctx = prec.mp
    yv = prec.real(to_fraction(y)) if not isinstance(y, mpmath.ctx_mp_python._mpf) else prec.adopt(y)
    nv = prec.real(nm)
    kv = prec.real(km)

    def g(t):
        return t**kv * ctx.exp(-t) * _hyp0f1_mp(ctx, nv, yv * t, prec.digits)

    xv = prec.real(to_fraction(x))
    pts = [0, xv / 2, xv] if float(y) * float(x) < 400 else [0, xv / 2, 3 * xv / 4, 7 * xv / 8, xv]
    val = ctx.quad(g, pts)
    return val / prec.real(poch)


def hkn_jet(k, n, x, y, order: int = 3, prec: Precision | int | None = None, rtol: float = 1e-13) -> list:
    """``[H, dH/dy, ..., d^order H/dy^order]`` at ``y``."""
    prec = as_precision(prec)
    return [hkn_value(k, n, x, y, prec, deriv=m, rtol=rtol) for m in range(order + 1)]


def log10_hkn(k, n, x, y) -> float:
    """``log10 H^k_n(x, y)`` with the exponential growth factored out of the integrand."""
    kf, nf, xf, yf = (float(to_fraction(v)) for v in (k, n, x, y))
    shift = 2 * math.sqrt(xf * yf)

    def f(t):
        return t**kf * np.exp(-t - shift) * _hyp0f1_array(nf, yf * t, 1e-17)

    val, _ = gauss_kronrod(f, 0.0, xf, 1e-13)
    return (math.log(val) + shift) / math.log(10)


def log10_dominance_ratio(k, n, x, y) -> float:
    """``log10`` of ``H^k_n(x, y) / (y^(1-n+k) e^y)``."""
    yf = float(to_fraction(y))
    beta = 1 - float(to_fraction(n)) + float(to_fraction(k))
    return log10_hkn(k, n, x, y) - beta * math.log10(yf) - yf / math.log(10)


def dominance_ratio(k, n, x, y, prec: Precision | int | None = None):
    """The ratio itself as an mpmath number (its exponent is far outside float range)."""
    prec = as_precision(prec)
    ctx = prec.mp if prec.mp is not None else mpmath.mp
    return ctx.power(10, ctx.mpf(log10_dominance_ratio(k, n, x, y)))


# ---------------------------------------------------------------------------
# H^k_n operators


def hkn_operator_text() -> str:
    return (
        "t^2*d^4 + (-t + 2*n + 2)*t*d^3 + (-t*x + (-k - n - 3)*t + n*(n + 1))*d^2"
        " + ((t - n)*x - n*(k + 2))*d + (k + 1)*x"
    )


def hkn_operator(k, n, x) -> ScalarOperator:
    """Fourth-order operator in ``y`` (written in the variable ``t``) annihilating ``H^k_n(x, .)``."""
    return parse_operator(hkn_operator_text(), {"k": k, "n": n, "x": x})


def hkn_gauge(k, n) -> tuple[Fraction, Fraction]:
    """``(alpha, beta)`` removing the dominant ``y^(1-n+k) e^y`` behaviour."""
    return Fraction(1), 1 - to_fraction(n) + to_fraction(k)


def hkn_gauged_system(k, n, x) -> FirstOrderSystem:
    alpha, beta = hkn_gauge(k, n)
    return gauge_transform(companion_system(hkn_operator(k, n, x)), alpha, beta)


def hkn_gauged_system_explicit(k, n, x) -> FirstOrderSystem:
    """The same gauged system written out entry by entry (for cross-checks)."""
    params = {"k": k, "n": n, "x": x}
    dg = "(-t - k + n - 1)/t"
    P = [
        [dg, "1", "0", "0"],
        ["0", dg, "1", "0"],
        ["0", "0", dg, "1"],
        ["(-k - 1)*x/t^2", "((-t + n)*x + n*k + 2*n)/t^2", "(t*x + (k + n + 3)*t - n^2 - n)/t^2", "(-k - n - 3)/t"],
    ]
    return FirstOrderSystem.from_lists(P, params=params, singular_points=(0,))


def hkn_gauged_initial(k, n, x, y, prec: Precision | int | None = None) -> np.ndarray:
    """Initial vector of the gauged system at ``y``: ``(H, H', H'', H''') e^(-y) y^(-beta)``."""
    prec = as_precision(prec)
    alpha, beta = hkn_gauge(k, n)
    u = hkn_jet(k, n, x, y, 3, prec)
    yv = prec.real(to_fraction(y))
    g = prec.exp(-alpha * yv) * yv ** (-prec.real(beta))
    return prec.array([v * g for v in u])


def hkn_gauged_oracle(k, n, x, prec: Precision | int | None = None):
    """``t -> H^k_n(x, t) e^(-t) t^(-beta)``, the first component of the gauged system."""
    prec = as_precision(prec)
    alpha, beta = hkn_gauge(k, n)

    def oracle(t):
        tv = prec.real(t)
        return hkn_value(k, n, x, t, prec) * prec.exp(-alpha * tv) * tv ** (-prec.real(beta))

    return oracle


# ---------------------------------------------------------------------------
# asymptotic solutions at y -> infinity


@dataclass(frozen=True)
class AsymptoticDescriptor:
    """Leading behaviour ``prefactor * exp(exponent)`` of a formal solution."""

    name: str
    expr: Expr

    def __str__(self):
        return f"{self.name} = {to_text(self.expr)}"


def asymptotic_descriptors(k, n, x) -> dict:
    k, n, x = to_fraction(k), to_fraction(n), to_fraction(x)
    s = -(Fraction(1, 2) + n) / 2
    xt = mul(Num(x), T) if x != 1 else T
    root = call("sqrt", xt)
    return {
        "h1": AsymptoticDescriptor("h1", mul(power(xt, s), call("exp", mul(root, Num(Fraction(-2)))))),
        "h2": AsymptoticDescriptor("h2", power(T, -k - 1)),
        "h3": AsymptoticDescriptor("h3", mul(power(xt, s), call("exp", mul(root, Num(Fraction(2)))))),
        "h4": AsymptoticDescriptor("h4", mul(power(T, 1 - n + k), call("exp", T))),
    }


def h3_series(k, n, x, terms: int, prec: Precision | int | None = None) -> list:
    """Coefficients ``a_0 = 1, a_1, ...`` of the formal solution
    ``(x y)^s exp(2 sqrt(x y)) sum_j a_j y^(-j/2)``, ``s = -(1/2 + n)/2``.

    Found by substituting the ansatz into the operator and cancelling the
    leading powers one at a time.
    """
    prec = as_precision(prec)
    op = hkn_operator(k, n, x)
    coeffs = [_poly_coeffs(c) for c in op.coeffs]
    s = -(Fraction(1, 2) + to_fraction(n)) / 2
    xs = prec.sqrt(prec.real(to_fraction(x)))
    images = [_apply_to_ansatz(coeffs, s - Fraction(j, 2), xs, prec) for j in range(terms)]
    top = max(max(img) for img in images if img)
    a = [prec.real(1)]
    for j in range(1, terms):
        # e_j (j >= 1) first contributes at y^(top - (j-1)/2), where that power must cancel
        e = top - Fraction(j - 1, 2)
        acc = sum((a[i] * images[i].get(e, 0) for i in range(j)), prec.real(0))
        lead = images[j].get(e, 0)
        if lead == 0:
            raise ArithmeticError("degenerate asymptotic recursion")
        a.append(-acc / lead)
    return a


def _poly_coeffs(e: Expr) -> dict:
    """Polynomial coefficients in ``t`` of a coefficient expression."""
    vals = {}
    # sample-and-solve on a few rational points; coefficients here are polynomials of degree <= 2
    pts = [Fraction(i) for i in range(1, 5)]
    ys = [evaluate(e, p, _FracKit()) for p in pts]
    # Newton divided differences -> monomial coefficients
    n = len(pts)
    coef = list(ys)
    for j in range(1, n):
        for i in range(n - 1, j - 1, -1):
            coef[i] = (coef[i] - coef[i - 1]) / (pts[i] - pts[i - j])
    poly = [Fraction(0)] * n
    for i in range(n - 1, -1, -1):
        # poly = poly * (t - pts[i]) + coef[i]
        new = [Fraction(0)] * n
        for d in range(n - 1):
            new[d + 1] += poly[d]
            new[d] -= poly[d] * pts[i]
        new[0] += coef[i]
        poly = new
    for d, c in enumerate(poly):
        if c != 0:
            vals[d] = c
    return vals


class _FracKit:
    """Exact rational evaluation backend for polynomial coefficients."""

    native = False
    digits = 0

    def const(self, x):
        return Fraction(x)

    real = const

    def sqrt(self, x):
        raise ValueError("not a polynomial coefficient")

    exp = log = sqrt


def _apply_to_ansatz(coeffs, s, xs, prec) -> dict:
    """``L[y^s exp(2 xs sqrt(y))] / exp(2 xs sqrt(y))`` as ``{exponent: coefficient}``."""
    # f = sum c_e y^e; d/dy [y^e E] = e y^(e-1) E + xs y^(e-1/2) E
    f = {s: prec.real(1)}
    out: dict = {}
    for order, poly in enumerate(coeffs):
        for d, c in poly.items():
            for e, v in f.items():
                key = e + d
                out[key] = out.get(key, 0) + prec.real(c) * v
        nxt: dict = {}
        for e, v in f.items():
            if e != 0:
                nxt[e - 1] = nxt.get(e - 1, 0) + e * v
            nxt[e - Fraction(1, 2)] = nxt.get(e - Fraction(1, 2), 0) + xs * v
        f = nxt
    return {e: v for e, v in out.items() if v != 0}


def h3_value(k, n, x, y, coefficients, prec: Precision | int | None = None):
    prec = as_precision(prec)
    s = -(Fraction(1, 2) + to_fraction(n)) / 2
    yv = prec.real(to_fraction(y)) if not isinstance(y, (float, np.floating)) else prec.real(y)
    xv = prec.real(to_fraction(x))
    r = prec.sqrt(yv)
    series = sum((a / r**j for j, a in enumerate(coefficients)), prec.real(0))
    return prec.exp(s * prec.log(xv * yv) + 2 * prec.sqrt(xv) * r) * series


def naive_asymptotic_errors(k, n, x, y_s, offsets=(10, 90), terms: int = 6) -> list:
    """Relative errors of ``C_s h3(y)`` anchored so that it equals ``H`` at ``y_s``."""
    a = h3_series(k, n, x, terms, 16)
    shift = lambda y: 2 * math.sqrt(float(x) * float(y))  # noqa: E731
    # compare in log space to keep large y finite
    def log_h3(y):
        return math.log(h3_value(k, n, x, y, a, 16) / math.exp(shift(y))) + shift(y)

    def log_h(y):
        return log10_hkn(k, n, x, y) * math.log(10)

    log_c = log_h(y_s) - log_h3(y_s)
    return [math.expm1(log_c + log_h3(y_s + d) - log_h(y_s + d)) for d in offsets]


# ---------------------------------------------------------------------------
# fixtures


def easy_system() -> FirstOrderSystem:
    return FirstOrderSystem.from_lists([[-1, 1, 0], [0, -1, 1], [0, 0, 0]])


def airy_operator() -> ScalarOperator:
    return parse_operator("d^2 - t")


def airy_system() -> FirstOrderSystem:
    return companion_system(airy_operator())


def exp_airy_operator() -> ScalarOperator:
    """``(d - 1)(d^2 - t)``: solutions are ``Ai``, ``Bi`` and ``e^t``."""
    return parse_operator("d^3 - d^2 - t*d + (t - 1)")


def fixtures(k=10, n=1, x=1) -> dict:
    return {
        "easy_system": easy_system(),
        "airy_system": airy_system(),
        "airy_operator": airy_operator(),
        "exp_airy_operator": exp_airy_operator(),
        "hkn_operator": hkn_operator(k, n, x),
        "hkn_gauged_system": hkn_gauged_system(k, n, x),
        "asymptotic": asymptotic_descriptors(k, n, x),
    }
