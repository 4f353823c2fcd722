"""One-step integrators for linear systems ``F' = P(t) F + B(t)``.

For a linear system every fixed-step method is a matrix map ``F -> Q F`` per
step.  Those matrices are assembled for many steps at once with array
arithmetic; only the final recurrence over the states is sequential.  An
inhomogeneous term is handled by appending a constant component equal to one.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .ddarray import DD
from .expr import SingularPointError
from .linalg import lu_solve
from .operators import FirstOrderSystem, Grid
from .precision import Precision, as_precision

CHUNK = 1 << 15


class StepperError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Stepper:
    """Stepper choice: ``euler``, ``rk4``, ``gauss`` (with ``stages``) or ``rk45``."""

    kind: str
    stages: int = 0
    rtol: float = 1e-6
    atol: float = 0.0

    def __post_init__(self):
        if self.kind not in ("euler", "rk4", "gauss", "rk45"):
            raise ValueError(f"unknown stepper {self.kind!r}")
        if self.kind == "gauss" and self.stages not in (1, 2, 3, 5):
            raise ValueError("Gauss stepper needs 1, 2, 3 or 5 stages")
        if self.kind == "rk45" and (self.rtol <= 0 or self.atol < 0):
            raise ValueError("rk45 needs rtol > 0 and atol >= 0")

    @classmethod
    def euler(cls):
        return cls("euler")

    @classmethod
    def rk4(cls):
        return cls("rk4")

    @classmethod
    def gauss(cls, stages: int = 2):
        return cls("gauss", stages)

    @classmethod
    def rk45(cls, rtol: float = 1e-6, atol: float = 0.0):
        return cls("rk45", 0, rtol, atol)

    @classmethod
    def parse(cls, name: str, stages: int = 2, rtol: float = 1e-6, atol: float = 0.0):
        name = name.lower()
        if name.startswith("gauss"):
            return cls.gauss(int(name[5:]) if name[5:] else stages)
        if name == "rk45":
            return cls.rk45(rtol, atol)
        return cls(name)

    def __str__(self):
        if self.kind == "gauss":
            return f"gauss{self.stages}"
        return self.kind


@dataclass
class SolutionTable:
    """States ``F_i`` at nodes ``t_i``; row 0 is the initial vector."""

    t: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    grid: Grid | None = None

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def component(self, j: int = 0) -> np.ndarray:
        return self.states[:, j]

    def at(self, t, prec: Precision | None = None):
        """State at the node equal to ``t``."""
        if self.grid is not None:
            i = self.grid.index_of(t)
            if i is not None:
                stride = self.meta.get("record_every", 1)
                if i % stride == 0:
                    return self.states[i // stride]
        diffs = np.abs(np.asarray(self.t, dtype=float) - float(t))
        i = int(np.argmin(diffs))
        if diffs[i] > 1e-9 * max(1.0, abs(float(t))):
            raise KeyError(f"no node at t = {t}")
        return self.states[i]


# ---------------------------------------------------------------------------
# Gauss-Legendre tableau


@functools.lru_cache(maxsize=None)
def _gauss_tableau_cached(s: int, digits: int):
    prec = as_precision(digits)
    one = prec.real(1)
    roots = []
    for i in range(1, s + 1):
        x = prec.real(math.cos(math.pi * (i - 0.25) / (s + 0.5)))
        for _ in range(100):
            p0, p1 = one, x
            for k in range(2, s + 1):
                p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
            dp = s * (x * p1 - p0) / (x * x - 1) if s > 1 else one
            if s == 1:
                p1, dp = x, one
            dx = p1 / dp
            x = x - dx
            if abs(dx) <= prec.eps * abs(x) * 1e-2 or dx == 0:
                break
        roots.append(x)
    roots.sort()
    c = prec.array([(x + 1) / 2 for x in roots])
    # quadrature weights b_i = w_i / 2 with w = 2 / ((1 - x^2) P_s'(x)^2)
    b = []
    for x in roots:
        p0, p1 = one, x
        for k in range(2, s + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = s * (x * p1 - p0) / (x * x - 1) if s > 1 else one
        b.append(1 / ((1 - x * x) * dp * dp))
    b = prec.array(b)
    # collocation conditions sum_j a_ij c_j^(k-1) = c_i^k / k
    V = prec.array([[c[j] ** k for j in range(s)] for k in range(s)])
    A = prec.zeros((s, s))
    for i in range(s):
        rhs = prec.array([c[i] ** (k + 1) / (k + 1) for k in range(s)])
        A[i], _ = lu_solve(V, rhs)
    return c, A, b


def gauss_tableau(s: int, prec: Precision | int | None = None):
    """Butcher tableau ``(c, A, b)`` of the s-stage Gauss method at precision D."""
    prec = as_precision(prec)
    return _gauss_tableau_cached(s, prec.digits)


# ---------------------------------------------------------------------------
# batched step matrices


def _kit_nodes(grid_t0: Fraction, h: Fraction, start: int, stop: int, kit):
    """``t_i = t0 + i h`` for ``i`` in ``[start, stop)`` as a kit array."""
    idx = np.arange(start, stop, dtype=np.float64)
    if kit.native:
        return float(grid_t0) + idx * float(h)
    if isinstance(kit.const(Fraction(0)), DD):
        return kit.const(grid_t0) + kit.const(h) * idx
    prec = kit
    t0, hh = prec.real(grid_t0), prec.real(h)
    return prec.array([t0 + int(i) * hh for i in idx])


def _eye(kit, r):
    if isinstance(kit.const(Fraction(0)), DD):
        return DD(np.eye(r))
    return kit.eye(r)


def _batched_solve(M, R):
    """Solve ``M X = R`` for stacks of small systems without pivoting."""
    M = M.copy()
    R = R.copy()
    n, m, _ = M.shape
    for p in range(m):
        piv = M[:, p, p]
        bad = ~_finite_nonzero(piv)
        if np.any(bad):
            raise StepperError("singular stage matrix; reduce the step size")
        if p + 1 < m:
            f = M[:, p + 1 :, p] / piv[:, None]
            M[:, p + 1 :, p:] = M[:, p + 1 :, p:] - f[:, :, None] * M[:, p : p + 1, p:]
            R[:, p + 1 :, :] = R[:, p + 1 :, :] - f[:, :, None] * R[:, p : p + 1, :]
    X = R
    for p in range(m - 1, -1, -1):
        if p + 1 < m:
            corr = None
            for j in range(p + 1, m):
                term = M[:, p, j][:, None] * X[:, j, :]
                corr = term if corr is None else corr + term
            X[:, p, :] = X[:, p, :] - corr
        X[:, p, :] = X[:, p, :] / M[:, p, p][:, None]
    return X


def _finite_nonzero(x):
    if isinstance(x, DD):
        return np.isfinite(x.hi) & (x.hi != 0)
    if x.dtype == object:
        return np.array([v != 0 for v in x], dtype=bool)
    return np.isfinite(x) & (x != 0)


def step_matrices(stepper: Stepper, system: FirstOrderSystem, t0, h, start: int, stop: int, kit):
    """One-step propagators for steps ``start..stop-1`` as an ``(n, r, r)`` kit array.

    ``system`` must be homogeneous (use :meth:`FirstOrderSystem.augmented`).
    """
    t0 = Fraction(t0)
    h = Fraction(h)
    n = stop - start
    r = system.dim
    eye = _eye(kit, r)
    ts = _kit_nodes(t0, h, start, stop, kit)
    if stepper.kind == "euler":
        return eye + kit.const(h) * system.batch(ts, kit)
    if stepper.kind == "rk4":
        half = kit.const(h / 2)
        p0 = system.batch(ts, kit)
        ph = system.batch(ts + half, kit)
        p1 = system.batch(ts + kit.const(h), kit)
        k1 = p0
        k2 = kit.matmul(ph, eye + half * k1)
        k3 = kit.matmul(ph, eye + half * k2)
        k4 = kit.matmul(p1, eye + kit.const(h) * k3)
        return eye + kit.const(h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    if stepper.kind == "gauss":
        s = stepper.stages
        prec = kit.prec if hasattr(kit, "prec") else kit
        c, A, b = gauss_tableau(s, prec)
        hk = kit.const(h)
        ps = [system.batch(ts + hk * kit.const(c[i]) if not kit.native else ts + float(h) * float(c[i]), kit) for i in range(s)]
        m = s * r
        if kit.native:
            M = np.zeros((n, m, m))
            R = np.zeros((n, m, r))
            for i in range(s):
                for j in range(s):
                    blk = -float(h) * float(A[i, j]) * ps[i]
                    if i == j:
                        blk = blk + np.eye(r)
                    M[:, i * r : (i + 1) * r, j * r : (j + 1) * r] = blk
                R[:, i * r : (i + 1) * r, :] = ps[i]
            try:
                K = np.linalg.solve(M, R)
            except np.linalg.LinAlgError:
                raise StepperError("singular stage matrix; reduce the step size") from None
            Q = np.broadcast_to(np.eye(r), (n, r, r)).copy()
            for i in range(s):
                Q += float(h) * float(b[i]) * K[:, i * r : (i + 1) * r, :]
            return Q
        zeros = kit.zeros((n, m, m))
        M = zeros
        R = kit.zeros((n, m, r))
        for i in range(s):
            for j in range(s):
                blk = -(hk * kit.const(A[i, j])) * ps[i]
                if i == j:
                    blk = blk + eye
                M[:, i * r : (i + 1) * r, j * r : (j + 1) * r] = blk
            R[:, i * r : (i + 1) * r, :] = ps[i]
        K = _batched_solve(M, R)
        Q = eye + 0 * ps[0]
        for i in range(s):
            Q = Q + (hk * kit.const(b[i])) * K[:, i * r : (i + 1) * r, :]
        return Q
    raise ValueError(f"{stepper.kind} has no fixed step matrix")


def propagator_matrix(stepper: Stepper, system: FirstOrderSystem, t, h, prec: Precision | None = None) -> np.ndarray:
    """Matrix ``Q`` with ``step(F) = Q F`` for a homogeneous system."""
    prec = as_precision(prec)
    if not system.is_homogeneous:
        raise ValueError("propagator matrices are defined for homogeneous systems only")
    return step_matrices(stepper, system, _frac(t), _frac(h), 0, 1, prec)[0]


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, float, str)):
        return Fraction(repr(float(x))) if isinstance(x, float) else Fraction(x)
    return Fraction(str(x))


def _step(stepper: Stepper, system: FirstOrderSystem, t, h, F, prec):
    prec = as_precision(prec)
    F = prec.asarray(F)
    t, h = _frac(t), _frac(h)
    if system.is_homogeneous:
        return step_matrices(stepper, system, t, h, 0, 1, prec)[0] @ F
    aug = system.augmented()
    Q = step_matrices(stepper, aug, t, h, 0, 1, prec)[0]
    G = np.concatenate([F, prec.array([1])])
    return (Q @ G)[:-1]


def euler_step(system: FirstOrderSystem, t, h, F, prec: Precision | None = None) -> np.ndarray:
    """``(I + h P(t)) F + h B(t)``."""
    return _step(Stepper.euler(), system, t, h, F, prec)


def rk4_step(system: FirstOrderSystem, t, h, F, prec: Precision | None = None) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step."""
    return _step(Stepper.rk4(), system, t, h, F, prec)


def gauss_irk_step(system: FirstOrderSystem, t, h, F, s: int = 2, prec: Precision | None = None) -> np.ndarray:
    """Implicit Gauss-Legendre step with ``s`` stages (order ``2s``)."""
    return _step(Stepper.gauss(s), system, t, h, F, prec)


# ---------------------------------------------------------------------------
# fixed-step solves


def overflow_cap(prec: Precision):
    if prec.digits <= 31:
        return 1e277
    return prec.mp.mpf(10) ** 100000


def _to_prec_batch(Q, kit, prec):
    return kit.to_prec(Q) if kit is not prec else Q


def iter_step_matrices(stepper: Stepper, system: FirstOrderSystem, grid: Grid, prec: Precision, chunk: int = CHUNK):
    """Yield ``(start, Q_batch)`` in the precision's scalar form, chunk by chunk."""
    kit = prec.kit
    if system.is_autonomous and grid.N > 0:
        Q = _to_prec_batch(step_matrices(stepper, system, grid.t_start, grid.h, 0, 1, kit), kit, prec)
        for start in range(0, grid.N, chunk):
            stop = min(start + chunk, grid.N)
            yield start, _Repeated(Q[0], stop - start)
        return
    for start in range(0, grid.N, chunk):
        stop = min(start + chunk, grid.N)
        Q = step_matrices(stepper, system, grid.t_start, grid.h, start, stop, kit)
        yield start, _to_prec_batch(Q, kit, prec)


class _Repeated:
    """Constant matrix repeated ``n`` times (autonomous systems)."""

    def __init__(self, mat, n):
        self.mat = mat
        self.n = n

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return self.mat


def solve_ivp(stepper: Stepper, system: FirstOrderSystem, F0, grid: Grid, prec: Precision | int | None = None,
              record_every: int = 1) -> SolutionTable:
    """Fixed-step initial-value solve on ``grid``.

    Growth beyond the overflow threshold is reported in ``meta["blowup"]``
    and the remaining states are NaN.
    """
    prec = as_precision(prec)
    if stepper.kind == "rk45":
        return rk45_solve(system, F0, grid.t_start, grid.t_end, stepper.rtol, stepper.atol, prec,
                          t_eval=grid.nodes(prec)[::record_every])
    F0 = prec.asarray(F0)
    r = system.dim
    if F0.shape != (r,):
        raise ValueError(f"initial vector has shape {F0.shape}, expected ({r},)")
    aug = not system.is_homogeneous
    work = system.augmented() if aug else system
    nrec = grid.N // record_every + 1
    states = prec.zeros((nrec, r))
    states[0] = F0
    cap = overflow_cap(prec)
    F = list(F0) + ([prec.real(1)] if aug else [])
    m = len(F)
    blowup = None
    nan = float("nan") if prec.native else prec.mp.nan
    for start, Qs in iter_step_matrices(Stepper(stepper.kind, stepper.stages), work, grid, prec):
        for k in range(len(Qs)):
            q = Qs[k]
            F = [sum((q[i, j] * F[j] for j in range(1, m)), q[i, 0] * F[0]) for i in range(m)]
            i = start + k + 1
            if any(not abs(v) <= cap for v in F[:r]):
                blowup = {"index": i, "t": float(grid.node(i))}
                break
            if i % record_every == 0:
                states[i // record_every] = F[:r]
        if blowup:
            states[blowup["index"] // record_every + (1 if blowup["index"] % record_every else 0):] = nan
            break
    ts = grid.nodes(prec)[::record_every]
    meta = {"stepper": str(stepper), "digits": prec.digits, "h": str(grid.h), "N": grid.N,
            "record_every": record_every}
    if blowup:
        meta["blowup"] = blowup
    return SolutionTable(ts, states, meta, grid)


# ---------------------------------------------------------------------------
# adaptive Dormand-Prince 5(4)

_DP_C = [Fraction(0), Fraction(1, 5), Fraction(3, 10), Fraction(4, 5), Fraction(8, 9), Fraction(1), Fraction(1)]
_DP_A = [
    [],
    [Fraction(1, 5)],
    [Fraction(3, 40), Fraction(9, 40)],
    [Fraction(44, 45), Fraction(-56, 15), Fraction(32, 9)],
    [Fraction(19372, 6561), Fraction(-25360, 2187), Fraction(64448, 6561), Fraction(-212, 729)],
    [Fraction(9017, 3168), Fraction(-355, 33), Fraction(46732, 5247), Fraction(49, 176), Fraction(-5103, 18656)],
    [Fraction(35, 384), Fraction(0), Fraction(500, 1113), Fraction(125, 192), Fraction(-2187, 6784), Fraction(11, 84)],
]
_DP_B = _DP_A[6] + [Fraction(0)]
_DP_E = [Fraction(71, 57600), Fraction(0), Fraction(-71, 16695), Fraction(71, 1920), Fraction(-17253, 339200),
         Fraction(22, 525), Fraction(-1, 40)]
# continuous extension of order four (Shampine)
_DP_P = [
    [Fraction(1), Fraction(-8048581381, 2820520608), Fraction(8663915743, 2820520608), Fraction(-12715105075, 11282082432)],
    [Fraction(0)] * 4,
    [Fraction(0), Fraction(131558114200, 32700410799), Fraction(-68118460800, 10900136933), Fraction(87487479700, 32700410799)],
    [Fraction(0), Fraction(-1754552775, 470086768), Fraction(14199869525, 1410260304), Fraction(-10690763975, 1880347072)],
    [Fraction(0), Fraction(127303824393, 49829197408), Fraction(-318862633887, 49829197408), Fraction(701980252875, 199316789632)],
    [Fraction(0), Fraction(-282668133, 205662961), Fraction(2019193451, 616988883), Fraction(-1453857185, 822651844)],
    [Fraction(0), Fraction(40617522, 29380423), Fraction(-110615467, 29380423), Fraction(69997945, 29380423)],
]

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5


def rk45_solve(system: FirstOrderSystem, F0, t0, t1, rtol: float = 1e-6, atol: float = 0.0,
               prec: Precision | int | None = None, t_eval=None, max_steps: int = 1_000_000) -> SolutionTable:
    """Adaptive Dormand-Prince 5(4) with a PI step-size controller.

    States are reported at ``t_eval`` (default: the accepted step points) using
    the method's dense output.  When the step size underflows or the solution
    overflows, integration stops: later entries are NaN and ``meta["failure"]``
    records the last good ``t``.
    """
    prec = as_precision(prec)
    if rtol <= 0 or atol < 0:
        raise ValueError("rk45 needs rtol > 0 and atol >= 0")
    F0 = prec.asarray(F0)
    t0 = prec.real(_frac(t0) if not isinstance(t0, (float,)) else t0)
    t1 = prec.real(_frac(t1) if not isinstance(t1, (float,)) else t1)
    C = [prec.real(x) for x in _DP_C]
    A = [[prec.real(x) for x in row] for row in _DP_A]
    B = [prec.real(x) for x in _DP_B]
    E = [prec.real(x) for x in _DP_E]
    P = [[prec.real(x) for x in row] for row in _DP_P]
    rtol_r, atol_r = prec.real(rtol), prec.real(atol)
    homogeneous = system.is_homogeneous

    def f(t, y):
        v = system.matrix(t, prec) @ y
        return v if homogeneous else v + system.vector(t, prec)

    def norm(x):
        return prec.sqrt(np.sum(x * x) / len(x))

    def scale(y, y_new):
        sc = atol_r + rtol_r * np.maximum(np.abs(y), np.abs(y_new))
        tiny = prec.real(prec.tol(-290) if prec.native else prec.tol(-300))
        return np.where(sc > 0, sc, tiny) if prec.native else np.array([s if s > 0 else tiny for s in sc], dtype=object)

    direction = 1 if t1 >= t0 else -1
    if t_eval is None:
        out_t = None
    else:
        out_t = prec.asarray(t_eval)
    meta = {"stepper": "rk45", "digits": prec.digits, "rtol": rtol, "atol": atol}
    if t1 == t0:
        ts = prec.array([t0])
        return SolutionTable(ts, prec.array([F0]), meta)

    t = t0
    y = F0.copy()
    k0 = f(t, y)
    # initial step (Hairer-Norsett-Wanner)
    sc = scale(y, y)
    d0, d1 = norm(y / sc), norm(k0 / sc)
    h0 = prec.real(1e-6) if (d0 < 1e-5 or d1 < 1e-5) else d0 / d1 / 100
    y1 = y + direction * h0 * k0
    d2 = norm((f(t + direction * h0, y1) - k0) / sc) / h0
    big = max(d1, d2)
    h1 = max(prec.real(1e-6), h0 / 1000) if big <= 1e-15 else (prec.real(0.01) / big) ** (prec.real(1) / 5)
    h = min(100 * h0, h1)

    acc_t = [t]
    acc_y = [y.copy()]
    pieces = []  # (t_old, h, y_old, K) for dense output
    err_prev = prec.real(1e-4)
    failure = None
    cap = overflow_cap(prec)
    steps = 0
    rejected = False
    while direction * (t1 - t) > 0:
        steps += 1
        if steps > max_steps:
            failure = {"kind": "max_steps", "t": float(t)}
            break
        if h < prec.tol(2) * abs(t):
            failure = {"kind": "step_underflow", "t": float(t)}
            break
        if direction * (t + direction * h - t1) > 0:
            h = abs(t1 - t)
        hs = direction * h
        K = [k0]
        try:
            for i in range(1, 7):
                yi = y + hs * sum((A[i][j] * K[j] for j in range(1, i)), A[i][0] * K[0])
                K.append(f(t + C[i] * hs, yi))
        except SingularPointError:
            raise
        y_new = y + hs * sum((B[j] * K[j] for j in range(1, 6)), B[0] * K[0])
        err_vec = hs * sum((E[j] * K[j] for j in range(1, 7)), E[0] * K[0])
        err = norm(err_vec / scale(y, y_new))
        finite = bool(np.all(prec.isfinite(y_new))) and prec.isfinite(err)
        if not finite:
            h = h * MIN_FACTOR
            rejected = True
            continue
        if err <= 1:
            if any(not abs(v) <= cap for v in y_new):
                failure = {"kind": "overflow", "t": float(t)}
                break
            pieces.append((t, hs, y, K))
            t = t + hs
            y = y_new
            k0 = K[6]
            acc_t.append(t)
            acc_y.append(y.copy())
            if err == 0:
                fac = prec.real(MAX_FACTOR)
            else:
                fac = SAFETY * err ** (-_ALPHA) * err_prev ** _BETA
                fac = min(prec.real(MAX_FACTOR), max(prec.real(MIN_FACTOR), fac))
            if rejected:
                fac = min(fac, prec.real(1))
            h = h * fac
            err_prev = max(err, prec.real(1e-4))
            rejected = False
        else:
            fac = max(prec.real(MIN_FACTOR), SAFETY * err ** (-prec.real(1) / 5))
            h = h * fac
            rejected = True

    meta["steps"] = len(pieces)
    if failure:
        meta["failure"] = failure
    if out_t is None:
        return SolutionTable(prec.array(acc_t), prec.array(acc_y), meta)

    nan = float("nan") if prec.native else prec.mp.nan
    states = prec.zeros((len(out_t), len(F0)))
    starts = [p[0] for p in pieces]
    j = 0
    for idx, te in enumerate(out_t):
        if te == t0:
            states[idx] = F0
            continue
        if direction * (te - t) > 0:
            states[idx] = nan
            continue
        while j < len(pieces) - 1 and direction * (te - (starts[j] + pieces[j][1])) > 0:
            j += 1
        while j > 0 and direction * (te - starts[j]) < 0:
            j -= 1
        t_old, hs, y_old, K = pieces[j]
        x = (te - t_old) / hs
        powers = [x, x * x, x * x * x, x * x * x * x]
        coef = [sum(P[i][k] * powers[k] for k in range(4)) for i in range(7)]
        states[idx] = y_old + hs * sum((coef[i] * K[i] for i in range(1, 7)), coef[0] * K[0])
    return SolutionTable(out_t, states, meta)
