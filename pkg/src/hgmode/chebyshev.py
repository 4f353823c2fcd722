"""Chebyshev collocation: points, barycentric interpolation, and rectangular
differentiation matrices for linear ODE boundary and data-value problems.

Rectangular (down-sampled) matrices follow the usual construction: differentiate
on ``n`` points, then resample the derivative onto ``n - r`` points, so the
``r`` condition rows can be appended to obtain a square system.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .expr import evaluate, to_fraction
from .linalg import SingularMatrixError, lu_solve
from .operators import DataPoint, ScalarOperator
from .precision import Precision, as_precision


@dataclass(frozen=True)
class ChebGrid:
    """``n`` Chebyshev points of the second kind on ``[a, b]`` (ascending)."""

    n: int
    a: Fraction
    b: Fraction
    x: np.ndarray
    t: np.ndarray
    prec: Precision

    @property
    def weights(self) -> np.ndarray:
        return barycentric_weights(self.n, self.prec)

    def to_unit(self, t):
        prec = self.prec
        return (prec.real(2) * t - prec.real(self.a + self.b)) / prec.real(self.b - self.a)


def cheb_points(n: int, a=-1, b=1, prec: Precision | int | None = None) -> ChebGrid:
    """``x_i = -cos(pi i/(n-1))`` written in sine form so the points are exactly symmetric."""
    prec = as_precision(prec)
    if n < 2:
        raise ValueError("need at least two Chebyshev points")
    a, b = to_fraction(a), to_fraction(b)
    if not b > a:
        raise ValueError("interval must satisfy a < b")
    pi = prec.pi
    sin = np.sin if prec.native else prec.mp.sin
    x = prec.array([sin(pi * (2 * i - n + 1) / (2 * (n - 1))) for i in range(n)])
    x[0], x[-1] = prec.real(-1), prec.real(1)
    half = prec.real((b - a) / 2)
    t = prec.real(a) + half * (x + 1)
    t[0], t[-1] = prec.real(a), prec.real(b)
    return ChebGrid(n, a, b, x, t, prec)


def barycentric_weights(n: int, prec: Precision) -> np.ndarray:
    w = prec.array([(-1) ** j for j in range(n)])
    w[0] = w[0] / 2
    w[-1] = w[-1] / 2
    return w


def interpolation_matrix(grid: ChebGrid, x_out) -> np.ndarray:
    """Rows of barycentric weights mapping node values to values at ``x_out`` (unit coordinates)."""
    prec = grid.prec
    x_out = np.atleast_1d(x_out)
    w = grid.weights
    E = prec.zeros((len(x_out), grid.n))
    for r, xo in enumerate(x_out):
        d = xo - grid.x
        hit = np.flatnonzero(d == 0)
        if hit.size:
            E[r, int(hit[0])] = prec.real(1)
            continue
        c = w / d
        E[r] = c / np.sum(c)
    return E


def barycentric_eval(grid: ChebGrid, values, t):
    """Interpolant through ``values`` at ``t`` (scalar or array, in ``[a, b]`` coordinates)."""
    prec = grid.prec
    scalar = np.ndim(t) == 0
    ts = prec.array(np.atleast_1d(t)) if not isinstance(t, np.ndarray) or t.dtype != prec.dtype else np.atleast_1d(t)
    xs = grid.to_unit(ts)
    # node hits are detected in t so that mapping round-off cannot miss them
    out = interpolation_matrix(grid, xs) @ prec.asarray(values)
    for r, tv in enumerate(ts):
        hit = np.flatnonzero(grid.t == tv)
        if hit.size:
            out[r] = values[int(hit[0])]
    return out[0] if scalar else out


def diff_matrix(grid: ChebGrid) -> np.ndarray:
    """First-derivative matrix on the grid, scaled to ``[a, b]``; diagonal by negative row sums."""
    prec = grid.prec
    n, x, w = grid.n, grid.x, grid.weights
    dx = x[:, None] - x[None, :]
    for i in range(n):
        dx[i, i] = prec.real(1)
    D = (w[None, :] / w[:, None]) / dx
    for i in range(n):
        D[i, i] = prec.real(0)
        D[i, i] = -np.sum(D[i])
    return D * prec.real(2 / (grid.b - grid.a))


def rect_diff_matrix(n_out: int, n: int, s: int, a=-1, b=1, prec: Precision | int | None = None) -> np.ndarray:
    """``M(n_out, n; s) = E D^s``: differentiate ``s`` times on ``n`` points, resample to ``n_out`` points."""
    prec = as_precision(prec)
    if s < 0 or n_out < 1 or n < 2:
        raise ValueError("invalid dimensions for a rectangular differentiation matrix")
    src = cheb_points(n, a, b, prec)
    out = cheb_points(n_out, a, b, prec) if n_out >= 2 else None
    return _rect(src, out, s)


def _rect(src: ChebGrid, out: ChebGrid | None, s: int) -> np.ndarray:
    prec = src.prec
    M = prec.eye(src.n)
    if s:
        D = diff_matrix(src)
        for _ in range(s):
            M = D @ M
    x_out = out.x if out is not None else prec.array([0])
    return interpolation_matrix(src, x_out) @ M


@dataclass
class SpectralSystem:
    A: np.ndarray
    B: np.ndarray
    grid: ChebGrid
    out: ChebGrid


def condition_row(grid: ChebGrid, d: DataPoint) -> np.ndarray:
    """Row evaluating ``f^(deriv_order)`` at ``d.p`` from node values."""
    prec = grid.prec
    p = to_fraction(d.p)
    if not grid.a <= p <= grid.b:
        raise ValueError(f"condition at {float(p)} lies outside [{float(grid.a)}, {float(grid.b)}]")
    pv = prec.real(p)
    hit = np.flatnonzero(grid.t == pv)
    if hit.size:
        row = prec.zeros(grid.n)
        row[int(hit[0])] = prec.real(1)
    else:
        row = interpolation_matrix(grid, [grid.to_unit(pv)])[0]
    if d.deriv_order:
        D = diff_matrix(grid)
        for _ in range(d.deriv_order):
            row = row @ D
    return row


def assemble_spectral(op: ScalarOperator, grid: ChebGrid, conditions) -> SpectralSystem:
    """``n - r`` collocation rows at the down-sampled points, then ``r`` condition rows."""
    prec = grid.prec
    r = op.rank
    conditions = [c if isinstance(c, DataPoint) else DataPoint(*c) for c in conditions]
    if len(conditions) != r:
        raise ValueError(f"operator of rank {r} needs exactly {r} conditions, got {len(conditions)}")
    n = grid.n
    if n - r < 2:
        raise ValueError(f"need n > rank + 1 points, got n = {n}")
    out = cheb_points(n - r, grid.a, grid.b, prec)
    D = diff_matrix(grid)
    E = interpolation_matrix(grid, out.x)
    A = prec.zeros((n, n))
    Dk = prec.eye(n)
    for k, c in enumerate(op.coeffs):
        if k:
            Dk = D @ Dk
        if c.is_zero():
            continue
        cv = evaluate(c, out.t, prec)
        A[: n - r] += cv[:, None] * (E @ Dk)
    B = prec.zeros(n)
    if not op.rhs.is_zero():
        B[: n - r] = evaluate(op.rhs, out.t, prec)
    for j, d in enumerate(conditions):
        A[n - r + j] = condition_row(grid, d)
        B[n - r + j] = prec.real(d.q)
    return SpectralSystem(A, B, grid, out)


@dataclass
class SpectralSolution:
    grid: ChebGrid
    values: np.ndarray
    residual: float

    def __call__(self, t):
        return barycentric_eval(self.grid, self.values, t)

    def derivative_values(self, order: int = 1) -> np.ndarray:
        D = diff_matrix(self.grid)
        v = self.values
        for _ in range(order):
            v = D @ v
        return v


def solve_spectral(op: ScalarOperator, a, b, n: int, conditions, prec: Precision | int | None = None) -> SpectralSolution:
    prec = as_precision(prec)
    grid = cheb_points(n, a, b, prec)
    system = assemble_spectral(op, grid, conditions)
    rows = [tuple(system.A[i]) for i in range(n - op.rank, n)]
    if len(set(rows)) < len(rows):
        # repeated condition rows; float elimination would not hit an exact zero pivot
        raise SingularMatrixError(n - 1)
    f, res = lu_solve(system.A, system.B)
    return SpectralSolution(grid, f, float(res))
