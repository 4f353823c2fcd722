"""Finite-difference collocation with data constraints (method A).

Every grid node whose backward-difference stencil fits inside the grid gives
one equation ``sum_k c_k(t_i) nabla^k f_{i+s_k} / h^k = b(t_i)``; each data
point adds one constraint row.  The unknowns are the grid values ``f_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from .expr import evaluate, to_fraction
from .linalg import condition_estimate, lu_solve, qr_least_squares
from .operators import DataPoint, Grid, ScalarOperator
from .precision import Precision, as_precision
from .steppers import SolutionTable


class StencilError(ValueError):
    pass


class OffGridError(ValueError):
    pass


@dataclass(frozen=True)
class StencilPlan:
    """Shift ``s_k`` per derivative order (``0 <= s_k <= k``) and row scaling."""

    shifts: tuple
    normalize: bool = True

    def __post_init__(self):
        for k, s in enumerate(self.shifts):
            if not 0 <= s <= k:
                raise StencilError(f"shift s_{k} = {s} is outside [0, {k}]")

    @classmethod
    def default(cls, rank: int, normalize: bool = True) -> "StencilPlan":
        """``s_k = floor(k/2)``: backward for ``k = 1``, as centered as allowed above."""
        return cls(tuple(k // 2 for k in range(rank + 1)), normalize)

    @property
    def rank(self) -> int:
        return len(self.shifts) - 1

    def reach(self, k: int) -> tuple[int, int]:
        """Offsets ``(lowest, highest)`` touched by the order-``k`` difference."""
        s = self.shifts[k]
        return s - k, s


@dataclass
class AssembledSystem:
    A: np.ndarray
    B: np.ndarray
    rows: list
    grid: Grid
    plan: StencilPlan
    prec: Precision
    least_squares: bool
    condition: float = float("nan")
    notes: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.A.shape


def _difference_weights(k: int, s: int, h, prec):
    """``{offset: weight}`` of ``nabla^k f_{i+s} / h^k``."""
    hk = h**k
    return {s - j: prec.real(Fraction((-1) ** j * comb(k, j))) / hk for j in range(k + 1)}


def difference_row(op: ScalarOperator, grid: Grid, i: int, plan: StencilPlan | None = None,
                   prec: Precision | int | None = None, coeffs=None) -> tuple[dict, object]:
    """Sparse equation row at node ``i`` as ``({column: value}, rhs)``."""
    prec = as_precision(prec)
    plan = plan or StencilPlan.default(op.rank)
    if plan.rank != op.rank:
        raise StencilError(f"plan covers order {plan.rank}, operator has rank {op.rank}")
    t = prec.real(grid.node(i))
    h = prec.real(grid.h)
    if coeffs is None:
        coeffs = [evaluate(c, t, prec) if not c.is_zero() else None for c in op.coeffs]
    row: dict = {}
    for k, c in enumerate(coeffs):
        if c is None:
            continue
        lo, hi = plan.reach(k)
        if i + lo < 0 or i + hi > grid.N:
            raise StencilError(f"order-{k} stencil at node {i} leaves the grid")
        for off, w in _difference_weights(k, plan.shifts[k], h, prec).items():
            row[i + off] = row.get(i + off, 0) + c * w
    rhs = evaluate(op.rhs, t, prec) if not op.rhs.is_zero() else prec.real(0)
    return row, rhs


def _stencil_fits(op: ScalarOperator, plan: StencilPlan, i: int, N: int) -> bool:
    for k, c in enumerate(op.coeffs):
        if c.is_zero():
            continue
        lo, hi = plan.reach(k)
        if i + lo < 0 or i + hi > N:
            return False
    return True


def _interpolation_row(grid: Grid, p: Fraction, npts: int, prec: Precision) -> dict:
    """Lagrange weights expressing ``f(p)`` through the ``npts`` nearest nodes."""
    pos = (p - grid.t_start) / grid.h
    start = int(np.floor(float(pos))) - (npts - 1) // 2
    start = min(max(start, 0), grid.N + 1 - npts)
    idx = range(start, start + npts)
    pv = prec.real(p)
    nodes = {j: prec.real(grid.node(j)) for j in idx}
    row = {}
    for a in idx:
        w = prec.real(1)
        for b in idx:
            if b != a:
                w = w * (pv - nodes[b]) / (nodes[a] - nodes[b])
        row[a] = w
    return row


def _constraint_row(grid: Grid, d: DataPoint, prec: Precision, offgrid: str, npts: int):
    p = to_fraction(d.p)
    if not grid.t_start <= p <= grid.t_end:
        raise OffGridError(f"data point {float(p)} lies outside the grid")
    i = grid.index_of(p)
    if d.deriv_order:
        if i is None:
            raise OffGridError(f"derivative data at {float(p)} must sit on a node")
        k = d.deriv_order
        # backward difference when it fits, forward otherwise
        s = k if i - k < 0 else 0
        if i + s - k < 0 or i + s > grid.N:
            raise StencilError(f"derivative data of order {k} at node {i} needs more nodes")
        h = prec.real(grid.h)
        return {i + off: w for off, w in _difference_weights(k, s, h, prec).items()}, (i, k)
    if i is not None:
        return {i: prec.real(1)}, (i, 0)
    if offgrid == "error":
        raise OffGridError(f"data point {float(p)} is not a grid node (h = {grid.h})")
    if offgrid == "nearest":
        j = int(round(float((p - grid.t_start) / grid.h)))
        return {j: prec.real(1)}, (j, 0)
    return _interpolation_row(grid, p, npts, prec), ("interp", p)


def assemble_method_a(op: ScalarOperator, grid: Grid, data, plan: StencilPlan | None = None,
                      prec: Precision | int | None = None, offgrid: str = "error", interp_points: int = 4,
                      estimate_condition: bool = True) -> AssembledSystem:
    """Equation rows at every node with a full stencil, then one row per datum.

    ``offgrid`` decides what happens to a value datum between nodes:
    ``"error"`` (default), ``"nearest"`` node, or ``"interpolate"`` through the
    ``interp_points`` nearest nodes.
    """
    prec = as_precision(prec)
    plan = plan or StencilPlan.default(op.rank)
    if plan.rank != op.rank:
        raise StencilError(f"plan covers order {plan.rank}, operator has rank {op.rank}")
    if offgrid not in ("error", "nearest", "interpolate"):
        raise ValueError(f"unknown off-grid policy {offgrid!r}")
    N = grid.N
    data = [d if isinstance(d, DataPoint) else DataPoint(*d) for d in data]
    eq_nodes = [i for i in range(N + 1) if _stencil_fits(op, plan, i, N)]
    nodes = grid.nodes(prec)
    coeff_cols = [evaluate(c, nodes, prec) if not c.is_zero() else None for c in op.coeffs]
    rows = []
    entries = []
    rhs = []
    for i in eq_nodes:
        row, b = difference_row(op, grid, i, plan, prec, coeffs=[None if c is None else c[i] for c in coeff_cols])
        entries.append(row)
        rhs.append(b)
        rows.append(("equation", i))
    seen = set()
    for j, d in enumerate(data):
        row, key = _constraint_row(grid, d, prec, offgrid, interp_points)
        if key in seen:
            raise ValueError(f"duplicate constraint at {float(to_fraction(d.p))}")
        seen.add(key)
        entries.append(row)
        rhs.append(prec.real(d.q))
        rows.append(("constraint", j))
    m = len(entries)
    if m < N + 1:
        raise ValueError(f"{m} rows for {N + 1} unknowns: add data points")
    A = prec.zeros((m, N + 1))
    B = prec.array(rhs)
    for r, row in enumerate(entries):
        for c, v in row.items():
            A[r, c] = v
    covered = np.zeros(N + 1, dtype=bool)
    for row in entries:
        covered[list(row)] = True
    if not covered.all():
        raise ValueError(f"unknown f_{int(np.flatnonzero(~covered)[0])} appears in no row")
    if plan.normalize:
        scale = np.abs(A).max(axis=1)
        scale = np.where(scale == 0, 1, scale) if A.dtype != object else np.array([s if s != 0 else 1 for s in scale])
        A = A / scale[:, None]
        B = B / scale
    system = AssembledSystem(A, B, rows, grid, plan, prec, least_squares=m != N + 1)
    system.notes.append(f"{len(eq_nodes)} equation rows, {len(data)} constraint rows, {N + 1} unknowns")
    if estimate_condition:
        if system.least_squares:
            sv = np.linalg.svd(prec.to_float(A), compute_uv=False)
            system.condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        else:
            system.condition = float(condition_estimate(A))
    return system


def solve_method_a(system: AssembledSystem) -> SolutionTable:
    prec = system.prec
    if system.least_squares:
        f, res = qr_least_squares(system.A, system.B, prec)
        residual = float(res)
    else:
        f, residual = lu_solve(system.A, system.B)
        residual = float(residual)
    meta = {
        "method": "A",
        "rows": len(system.rows),
        "least_squares": system.least_squares,
        "condition": system.condition,
        "residual": residual,
        "shifts": list(system.plan.shifts),
        "notes": list(system.notes),
    }
    return SolutionTable(system.grid.nodes(prec), f.reshape(-1, 1), meta, system.grid)


def equation_residuals(system: AssembledSystem, values) -> np.ndarray:
    """Equation-row residuals ``A f - B`` for given node values (constraint rows excluded)."""
    values = system.prec.asarray(values)
    eq = [r for r, (kind, _) in enumerate(system.rows) if kind == "equation"]
    return system.A[eq] @ values - system.B[eq]
