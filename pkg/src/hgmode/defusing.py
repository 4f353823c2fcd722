"""Eigen-filtering of initial vectors for unstable linear systems.

The ordered product ``Q = Q(N-1) ... Q(0)`` of one-step propagators (the
matrix factorial) approximates the fundamental matrix over the grid.  Its
large eigenvalues belong to solutions that grow fastest; projecting the
initial vector onto the remaining eigenvectors removes those components before
propagation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .ddarray import DD
from .linalg import EigenDecomposition, _norm_inf, lu_solve, real_eigen
from .operators import FirstOrderSystem, Grid
from .precision import Precision, as_precision
from .steppers import CHUNK, SolutionTable, Stepper, solve_ivp, step_matrices


class DefusingError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# matrix factorial


def _concat(a, b, axis):
    if isinstance(a, DD):
        return DD(np.concatenate([a.hi, b.hi], axis=axis), np.concatenate([a.lo, b.lo], axis=axis))
    return np.concatenate([a, b], axis=axis)


def _tree_product(qs, kit):
    """Ordered products of each row of ``qs`` (shape ``(nb, K, r, r)``), later factors on the left."""
    while qs.shape[1] > 1:
        k = qs.shape[1]
        prod = kit.matmul(qs[:, 1:k:2], qs[:, 0 : k - 1 : 2])
        if k % 2:
            prod = _concat(prod, qs[:, k - 1 : k], axis=1)
        qs = prod
    return qs[:, 0]


def _matrix_power(q, n, prec):
    result = prec.eye(q.shape[0])
    base = q
    while n:
        if n & 1:
            result = base @ result
        n >>= 1
        if n:
            base = base @ base
    return result


@dataclass
class MatrixFactorial:
    """Ordered propagator product with its eigen decomposition.

    ``partials[b]`` is the product of the first ``checkpoints[b]`` steps.
    """

    Q: np.ndarray
    grid: Grid
    stepper: Stepper
    eigen: EigenDecomposition | None
    prec: Precision
    checkpoints: list = field(default_factory=list)
    partials: list = field(default_factory=list)

    @property
    def eigenvalues(self):
        return self.eigen.eigenvalues

    @property
    def eigenvectors(self):
        return self.eigen.eigenvectors


def matrix_factorial(stepper: Stepper, system: FirstOrderSystem, grid: Grid, prec: Precision | int | None = None,
                     eigen: bool = True, block: int | None = None) -> MatrixFactorial:
    """Build ``Q = Q(N-1, h) ... Q(0, h)`` with checkpoints every ``block`` steps.

    ``block`` defaults to ``max(1, N // 1000)``.
    """
    prec = as_precision(prec)
    if stepper.kind == "rk45":
        raise ValueError("the matrix factorial needs a fixed-step stepper")
    if not system.is_homogeneous:
        raise ValueError("the matrix factorial needs a homogeneous system")
    N = grid.N
    K = block or max(1, N // 1000)
    kit = prec.kit
    r = system.dim
    blocks = []
    if system.is_autonomous:
        q1 = step_matrices(stepper, system, grid.t_start, grid.h, 0, 1, kit)
        q1 = kit.to_prec(q1)[0] if kit is not prec else q1[0]
        full = _matrix_power(q1, K, prec)
        blocks = [full] * (N // K)
        if N % K:
            blocks.append(_matrix_power(q1, N % K, prec))
    else:
        per_chunk = K * max(1, CHUNK // K)
        for start in range(0, N, per_chunk):
            stop = min(start + per_chunk, N)
            qs = step_matrices(stepper, system, grid.t_start, grid.h, start, stop, kit)
            n = stop - start
            nb, rem = divmod(n, K)
            if nb:
                body = qs[: nb * K].reshape(nb, K, r, r)
                prods = _tree_product(body, kit)
                prods = kit.to_prec(prods) if kit is not prec else prods
                blocks.extend(prods[i] for i in range(nb))
            if rem:
                tail = qs[nb * K :].reshape(1, rem, r, r)
                prods = _tree_product(tail, kit)
                prods = kit.to_prec(prods) if kit is not prec else prods
                blocks.append(prods[0])
    partials = [prec.eye(r)]
    checkpoints = [0]
    for i, b in enumerate(blocks):
        partials.append(b @ partials[-1])
        checkpoints.append(min((i + 1) * K, N))
    Q = partials[-1]
    if not np.all(prec.isfinite(Q)):
        raise OverflowError("matrix factorial overflowed; rerun with more digits (--digits)")
    mf = MatrixFactorial(Q, grid, stepper, None, prec, checkpoints, partials)
    if eigen:
        mf.eigen = real_eigen(Q, prec)
    return mf


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class DefusePolicy:
    """How many eigen directions to drop and how to rescale the result.

    ``cut``: ``"gap"`` keeps everything below the largest relative gap between
    consecutive eigenvalue magnitudes; ``"threshold"`` keeps eigenvalues whose
    magnitude is below ``tau``.
    ``scaling``: ``"match"`` rescales so component ``component`` (1-based)
    equals that of the original vector; ``"unit"`` keeps the plain projection.
    """

    cut: str = "gap"
    tau: float = 1.0
    scaling: str = "match"
    component: int = 1

    def __post_init__(self):
        if self.cut not in ("gap", "threshold"):
            raise ValueError(f"unknown cut policy {self.cut!r}")
        if self.scaling not in ("match", "unit"):
            raise ValueError(f"unknown scaling policy {self.scaling!r}")
        if self.cut == "threshold" and not self.tau > 0:
            raise ValueError("threshold policy needs tau > 0")

    def first_kept(self, eigenvalues) -> int:
        """1-based index ``m`` of the first retained eigenvalue."""
        lam = [abs(x) for x in eigenvalues]
        r = len(lam)
        if self.cut == "gap":
            if r < 2:
                return r + 1
            ratios = [lam[i + 1] / lam[i] if lam[i] != 0 else 1 for i in range(r - 1)]
            g = min(range(r - 1), key=lambda i: ratios[i])
            return g + 2
        for i, x in enumerate(lam):
            if x < self.tau:
                return i + 1
        return r + 1


@dataclass
class DefusedInitial:
    F0: np.ndarray
    m: int
    c: object
    coefficients: np.ndarray


def defuse_initial_value(mf: MatrixFactorial, F0, policy: DefusePolicy | None = None) -> DefusedInitial:
    """Project ``F0`` onto eigenvectors ``v_m .. v_r`` and rescale."""
    policy = policy or DefusePolicy()
    prec = mf.prec
    F0 = prec.asarray(F0)
    V = mf.eigen.eigenvectors
    f, _ = lu_solve(V, F0)
    m = policy.first_kept(mf.eigen.eigenvalues)
    r = len(F0)
    if m > r:
        raise DefusingError("nothing retained: every eigen direction is above the cut")
    kept = V[:, m - 1 :] @ f[m - 1 :]
    if policy.scaling == "match":
        j = policy.component - 1
        if abs(kept[j]) <= prec.tol(4) * _norm_inf(F0):
            raise DefusingError(f"projected vector has a vanishing component {policy.component}")
        c = F0[j] / kept[j]
    else:
        c = prec.real(1)
    return DefusedInitial(c * kept, m, c, f)


def defused_solve(stepper: Stepper, system: FirstOrderSystem, grid: Grid, F0, policy: DefusePolicy | None = None,
                  prec: Precision | int | None = None, record_every: int = 1, mf: MatrixFactorial | None = None
                  ) -> SolutionTable:
    """Defuse ``F0`` with the matrix factorial over ``grid`` and propagate it."""
    prec = as_precision(prec)
    mf = mf or matrix_factorial(stepper, system, grid, prec)
    d = defuse_initial_value(mf, F0, policy)
    table = solve_ivp(stepper, system, d.F0, grid, prec, record_every=record_every)
    table.meta.update(
        defused_initial=[prec.format(x) for x in d.F0],
        m=d.m,
        c=prec.format(d.c),
        eigenvalues=[prec.format(x) for x in mf.eigen.eigenvalues],
        eigenvectors=[[prec.format(x) for x in mf.eigenvectors[:, j]] for j in range(mf.eigenvectors.shape[1])],
        eigen_residual=float(mf.eigen.residual),
        final_from_factorial=[prec.format(x) for x in mf.Q @ d.F0],
    )
    return table


def windowed_defused_solve(stepper: Stepper, system: FirstOrderSystem, grid: Grid, F0, window: int,
                           policy: DefusePolicy | None = None, prec: Precision | int | None = None,
                           record_every: int = 1) -> SolutionTable:
    """Defuse afresh every ``window`` steps.

    Each window builds its own matrix factorial, filters the state reached at
    the window start, and propagates it across the window.  This keeps the
    eigenvalue spread of each factorial within reach of the working
    precision on long intervals.
    """
    prec = as_precision(prec)
    policy = policy or DefusePolicy()
    if window < 1:
        raise ValueError("window must be at least one step")
    if window % record_every:
        raise ValueError("window must be a multiple of record_every")
    r = system.dim
    nrec = grid.N // record_every + 1
    states = prec.zeros((nrec, r))
    F = prec.asarray(F0)
    states[0] = F
    windows = []
    for start in range(0, grid.N, window):
        n = min(window, grid.N - start)
        sub = Grid(grid.node(start), grid.h, n)
        mf = matrix_factorial(stepper, system, sub, prec)
        d = defuse_initial_value(mf, F, policy)
        if start % record_every == 0:
            states[start // record_every] = d.F0
        part = solve_ivp(stepper, system, d.F0, sub, prec, record_every=record_every if n % record_every == 0 else 1)
        stride = part.meta["record_every"]
        for k in range(1, part.states.shape[0]):
            i = start + k * stride
            if i % record_every == 0:
                states[i // record_every] = part.states[k]
        F = part.states[-1]
        windows.append({"t_start": float(sub.t_start), "m": d.m,
                        "eigenvalues": [prec.format(x) for x in mf.eigen.eigenvalues]})
        if "blowup" in part.meta:
            break
    meta = {"stepper": str(stepper), "digits": prec.digits, "h": str(grid.h), "N": grid.N,
            "record_every": record_every, "windows": windows}
    return SolutionTable(grid.nodes(prec)[::record_every], states, meta, grid)


def error_bound(mf: MatrixFactorial, F0_defused, true_norm_estimate, delta) -> object:
    """Triangle-inequality bound ``||Q F0'|| + ||F_true|| + 2 delta``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    prec = mf.prec
    QF = mf.Q @ prec.asarray(F0_defused)
    return prec.sqrt(np.sum(QF * QF)) + true_norm_estimate + 2 * delta
