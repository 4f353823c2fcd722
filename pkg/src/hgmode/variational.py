"""Basis-expansion fits (methods B and C).

The unknown is ``f = sum_k f_k e_k``.  With a quadrature rule ``(t_j, T_j)`` the
squared residual ``int |L f - b|^2 dmu`` becomes ``||G F - g||^2`` where
``G[j, k] = sqrt(T_j) (L e_k)(t_j)`` and ``g[j] = sqrt(T_j) b(t_j)``.  Method B
adds the data either as hard constraints or as a penalty; method C works with
the Gram matrix ``S = G^T G`` directly.  Everything is linear in ``F``, so each
fit is one linear solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .expr import Expr, SingularPointError, T, evaluate, mul, parse_expr, power, call, to_fraction, to_text, Num
from .jet import Jet
from .linalg import RankDeficiencyError, SingularMatrixError, householder_qr, lu_solve, qr_least_squares
from .operators import DataPoint, ScalarOperator, apply_operator
from .precision import Precision, as_precision


class FitError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# bases


class BasisFamily:
    """A finite list of functions that can be evaluated as jets."""

    name = "basis"

    def __len__(self) -> int:
        raise NotImplementedError

    def jets(self, tjet: Jet) -> list:
        """Member jets at the points carried by the variable jet ``tjet``."""
        raise NotImplementedError

    def describe(self) -> list[str]:
        raise NotImplementedError

    def values(self, ts, prec: Precision | int | None = None, deriv: int = 0) -> np.ndarray:
        """Matrix ``[e_k^(deriv)(t_i)]`` of shape ``(len(ts), len(self))``."""
        prec = as_precision(prec)
        ts = prec.asarray(ts) if not isinstance(ts, np.ndarray) else ts
        scalar = ts.ndim == 0
        ts = ts.reshape(-1)
        jets = self.jets(Jet.variable(ts, deriv, prec))
        cols = [_finite(j.coeffs[deriv], ts, prec) for j in jets]
        out = prec.zeros((ts.shape[0], len(self)))
        for k, c in enumerate(cols):
            out[:, k] = c
        return out[0] if scalar else out


def _finite(values, ts, prec):
    values = values if isinstance(values, np.ndarray) else np.full(ts.shape, values, dtype=prec.dtype)
    ok = np.asarray(prec.isfinite(values), dtype=bool)
    if not ok.all():
        raise SingularPointError(float(ts[int(np.flatnonzero(~ok)[0])]), "basis member is not finite")
    return values


class ExprBasis(BasisFamily):
    """Members given as expressions in ``t``."""

    name = "expr"

    def __init__(self, members):
        self.members = [m if isinstance(m, Expr) else parse_expr(m) for m in members]

    def __len__(self):
        return len(self.members)

    def jets(self, tjet):
        return [evaluate(e, tjet, tjet.kit) for e in self.members]

    def describe(self):
        return [to_text(e) for e in self.members]


class UserExpr(ExprBasis):
    name = "user"

    def __init__(self, members, params: dict | None = None):
        super().__init__([m if isinstance(m, Expr) else parse_expr(m, params) for m in members])


class Monomial(ExprBasis):
    """``(t - center)^j`` for ``j = 0..count-1``."""

    name = "monomial"

    def __init__(self, count: int, center=0):
        self.center = to_fraction(center)
        shifted = T - Num(self.center) if self.center else T
        super().__init__([power(shifted, Fraction(j)) if j else Num(Fraction(1)) for j in range(count)])


class AsymptoticPower(ExprBasis):
    """``e_j(t) = t^gamma exp(kappa t^sigma) t^(-j/2)`` for ``j = 0..count-1``."""

    name = "asymptotic"

    def __init__(self, count: int, gamma=Fraction(-3, 4), kappa=2, sigma=Fraction(1, 2)):
        self.gamma, self.kappa, self.sigma = to_fraction(gamma), to_fraction(kappa), to_fraction(sigma)
        growth = call("exp", mul(Num(self.kappa), power(T, self.sigma)))
        super().__init__([mul(power(T, self.gamma - Fraction(j, 2)), growth) for j in range(count)])


class ChebyshevOn(BasisFamily):
    """``T_j((2t - a - b)/(b - a))`` for ``j = 0..count-1``."""

    name = "chebyshev"

    def __init__(self, count: int, a, b):
        self.count = count
        self.a, self.b = to_fraction(a), to_fraction(b)
        if not self.b > self.a:
            raise ValueError("Chebyshev basis needs a < b")

    def __len__(self):
        return self.count

    def jets(self, tjet):
        kit = tjet.kit
        x = (tjet * kit.const(2) - kit.const(self.a + self.b)) * kit.const(1 / (self.b - self.a))
        out = [x * 0 + 1, x]
        while len(out) < self.count:
            out.append(x * out[-1] * 2 - out[-2])
        return out[: self.count]

    def describe(self):
        return [f"T_{j} on [{self.a}, {self.b}]" for j in range(self.count)]


def make_basis(kind: str, count: int, **kw) -> BasisFamily:
    kinds = {"monomial": Monomial, "chebyshev": ChebyshevOn, "asymptotic": AsymptoticPower}
    if kind == "user":
        return UserExpr(kw["members"], kw.get("params"))
    if kind not in kinds:
        raise ValueError(f"unknown basis {kind!r}")
    return kinds[kind](count, **kw)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __len__(self):
        return len(self.nodes)

    def integrate(self, values):
        return np.sum(self.weights * values)


def trapezoid(a, b, N: int, prec: Precision | int | None = None) -> QuadratureRule:
    prec = as_precision(prec)
    a, b = to_fraction(a), to_fraction(b)
    if N < 1 or not b > a:
        raise ValueError("trapezoid rule needs N >= 1 and a < b")
    h = (b - a) / N
    nodes = prec.array([a + i * h for i in range(N + 1)])
    w = [h] * (N + 1)
    w[0] = w[-1] = h / 2
    return QuadratureRule(nodes, prec.array(w), f"trapezoid({N})")


def chebyshev_weight(a, b, k: int, prec: Precision | int | None = None) -> QuadratureRule:
    """Nodes ``cos(i pi / k)``, ``i = 1..k-1``, ascending, with weights
    ``(pi/k) sin^2(i pi / k)`` for ``int sqrt(1 - x^2) g(x) dx``, mapped to ``[a, b]``.
    """
    prec = as_precision(prec)
    if k < 2:
        raise ValueError("Chebyshev weight rule needs k >= 2")
    a, b = to_fraction(a), to_fraction(b)
    pi = prec.pi
    half = prec.real((b - a) / 2)
    mid = prec.real((a + b) / 2)
    xs, ws = [], []
    for i in range(k - 1, 0, -1):
        arg = pi * i / k
        c = np.cos(arg) if prec.native else prec.mp.cos(arg)
        s = np.sin(arg) if prec.native else prec.mp.sin(arg)
        xs.append(mid + half * c)
        ws.append(pi / k * s * s * half)
    return QuadratureRule(prec.array(xs), prec.array(ws), f"chebyshev-weight({k})")


# ---------------------------------------------------------------------------
# assembly


def operator_columns(op: ScalarOperator, basis: BasisFamily, ts, prec: Precision) -> list:
    """``(L e_k)(t_j)`` for each member, as arrays over ``ts``."""
    tjet = Jet.variable(ts, op.rank, prec)
    cols = []
    for j in basis.jets(tjet):
        v = apply_operator(op, j, ts)
        cols.append(_finite(v, ts, prec))
    return cols


def design_matrix(op: ScalarOperator, basis: BasisFamily, quad: QuadratureRule,
                  prec: Precision | int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(G, g)`` with ``G[j, k] = sqrt(T_j) (L e_k)(t_j)`` and ``g[j] = sqrt(T_j) b(t_j)``."""
    prec = as_precision(prec)
    ts = quad.nodes
    root = prec.sqrt(quad.weights)
    G = prec.zeros((len(ts), len(basis)))
    for k, col in enumerate(operator_columns(op, basis, ts, prec)):
        G[:, k] = root * col
    if op.rhs.is_zero():
        g = prec.zeros(len(ts))
    else:
        g = root * _finite(evaluate(op.rhs, ts, prec), ts, prec)
    return G, g


def data_matrix(basis: BasisFamily, data, prec: Precision) -> tuple[np.ndarray, np.ndarray]:
    """``P_e[i, k] = e_k^(d_i)(p_i)`` and ``Q[i] = q_i``."""
    data = [d if isinstance(d, DataPoint) else DataPoint(*d) for d in data]
    P = prec.zeros((len(data), len(basis)))
    for i, d in enumerate(data):
        P[i] = basis.values(prec.asarray([prec.real(to_fraction(d.p))]), prec, d.deriv_order)[0]
    return P, prec.array([d.q for d in data])


def gram_matrix(op: ScalarOperator, basis: BasisFamily, quad: QuadratureRule,
                prec: Precision | int | None = None) -> np.ndarray:
    """``S = G^T G``, so ``S[i, j]`` approximates ``int (L e_i)(L e_j) dmu``."""
    prec = as_precision(prec)
    G, _ = design_matrix(op, basis, quad, prec)
    return G.T @ G


# ---------------------------------------------------------------------------
# fits


@dataclass
class FitResult:
    coefficients: np.ndarray
    loss: object
    basis: BasisFamily
    prec: Precision
    constraint_residuals: np.ndarray | None = None
    objective: object = None
    data_misfit: object = None
    meta: dict = field(default_factory=dict)

    def __call__(self, ts, deriv: int = 0):
        return self.basis.values(ts, self.prec, deriv) @ self.coefficients


def loss_value(G, g, F, prec):
    r = G @ F - g
    return np.sum(r * r) if len(r) else prec.real(0)


def _column_scale(*mats, prec):
    """Column scale factors equilibrating the stacked matrices."""
    stacked = np.vstack([prec.to_float(np.abs(m)) for m in mats if m.size])
    s = stacked.max(axis=0)
    s[s == 0] = 1
    return prec.array(s)


def _row_rank_check(P, prec):
    if P.shape[0] == 0:
        return
    if P.shape[0] > P.shape[1]:
        raise RankDeficiencyError(P.shape[1])
    qr_least_squares(P.T, prec.zeros(P.shape[1]), prec)


def fit_method_b_constrained(op: ScalarOperator, basis: BasisFamily, quad: QuadratureRule, data,
                             prec: Precision | int | None = None) -> FitResult:
    """Minimize ``||G F - g||^2`` subject to the data, through the KKT system."""
    prec = as_precision(prec)
    G, g = design_matrix(op, basis, quad, prec)
    P, Q = data_matrix(basis, data, prec)
    m, r = len(basis), len(Q)
    if r > m:
        raise FitError(f"{r} constraints exceed the {m} basis members")
    try:
        _row_rank_check(P, prec)
    except RankDeficiencyError:
        raise FitError("constraint rows are linearly dependent (duplicate data points?)") from None
    s = _column_scale(G, P, prec=prec)
    Gs, Ps = G / s, P / s
    K = prec.zeros((m + r, m + r))
    K[:m, :m] = Gs.T @ Gs
    K[:m, m:] = Ps.T
    K[m:, :m] = Ps
    rhs = np.concatenate([Gs.T @ g, Q])
    try:
        sol, res = lu_solve(K, rhs)
    except SingularMatrixError as exc:
        raise FitError("KKT matrix is singular") from exc
    F = sol[:m] / s
    return FitResult(F, loss_value(G, g, F, prec), basis, prec, constraint_residuals=P @ F - Q,
                     meta={"method": "B-constrained", "kkt_residual": float(res), "nodes": len(quad)})


def fit_method_b_penalized(op: ScalarOperator, basis: BasisFamily, quad: QuadratureRule, data,
                           prec: Precision | int | None = None, alpha=1, beta=1, gamma=0) -> FitResult:
    """Minimize ``alpha l + beta sum (f(p_i) - q_i)^2 + gamma sum f_k^2`` by one stacked QR solve."""
    prec = as_precision(prec)
    if alpha < 0 or beta < 0 or gamma < 0 or alpha + beta <= 0:
        raise ValueError("need alpha, beta, gamma >= 0 and alpha + beta > 0")
    G, g = design_matrix(op, basis, quad, prec)
    P, Q = data_matrix(basis, data, prec)
    m = len(basis)
    ra, rb, rc = (prec.sqrt(prec.real(to_fraction(v))) for v in (alpha, beta, gamma))
    blocks = [ra * G, rb * P]
    rhs = [ra * g, rb * Q]
    if gamma:
        blocks.append(rc * prec.eye(m))
        rhs.append(prec.zeros(m))
    A = np.vstack(blocks)
    b = np.concatenate(rhs)
    if not np.any(prec.to_float(np.abs(A)) > 0):
        raise FitError("the stacked least-squares matrix is zero")
    s = _column_scale(A, prec=prec)
    try:
        Fs, _ = qr_least_squares(A / s, b, prec)
    except RankDeficiencyError as exc:
        raise FitError(f"stacked system is rank deficient at column {exc.column}") from exc
    F = Fs / s
    misfit = P @ F - Q
    return FitResult(F, loss_value(G, g, F, prec), basis, prec, constraint_residuals=misfit,
                     data_misfit=np.sum(misfit * misfit),
                     meta={"method": "B-penalized", "alpha": alpha, "beta": beta, "gamma": gamma, "nodes": len(quad)})


def _min_norm_feasible(P, Q, prec):
    r, m = P.shape
    R, Qt = householder_qr(P.T, prec.eye(m), prec)
    z = Q.copy()
    for i in range(r):
        z[i] = (z[i] - R[:i, i] @ z[:i]) / R[i, i]
    return Qt[:r].T @ z


def fit_method_c(S: np.ndarray, basis: BasisFamily, data, mode: str = "penalized",
                 prec: Precision | int | None = None) -> FitResult:
    """Quadratic-form fit with the Gram matrix ``S``.

    ``"penalized"`` solves ``(S + P^T P) F = P^T Q``; ``"constrained"`` minimizes
    ``F^T S F`` subject to ``P F = Q`` through the KKT system, returning the
    minimum-norm feasible point when ``S`` vanishes.
    """
    prec = as_precision(prec)
    P, Q = data_matrix(basis, data, prec)
    m, r = len(basis), len(Q)
    if mode == "penalized":
        try:
            F, res = lu_solve(S + P.T @ P, P.T @ Q)
        except SingularMatrixError as exc:
            raise FitError("normal equations are singular") from exc
    elif mode == "constrained":
        try:
            _row_rank_check(P, prec)
        except RankDeficiencyError:
            raise FitError("constraint rows are linearly dependent") from None
        if not np.any(prec.to_float(np.abs(S)) > 0):
            F, res = _min_norm_feasible(P, Q, prec), 0.0
        else:
            s = _column_scale(S, P, prec=prec)
            K = prec.zeros((m + r, m + r))
            K[:m, :m] = (S / s) / s[:, None]
            K[:m, m:] = (P / s).T
            K[m:, :m] = P / s
            try:
                sol, res = lu_solve(K, np.concatenate([prec.zeros(m), Q]))
            except SingularMatrixError as exc:
                raise FitError("KKT matrix is singular (basis too small or degenerate data)") from exc
            F = sol[:m] / s
    else:
        raise ValueError(f"unknown method C mode {mode!r}")
    misfit = P @ F - Q
    return FitResult(F, None, basis, prec, constraint_residuals=misfit, objective=F @ (S @ F),
                     data_misfit=np.sum(misfit * misfit), meta={"method": f"C-{mode}", "residual": float(res)})


def quadrature_loss_bound(fit: FitResult, refined_quad_loss) -> object:
    """``l + |l_refined - l|``: the loss plus a computable stand-in for the quadrature error.

    The true ``int |L f - b|^2 dmu`` is at most ``l`` plus the quadrature error
    of the rule that produced ``l``.
    """
    return fit.loss + abs(refined_quad_loss - fit.loss)


def refined_loss(op: ScalarOperator, fit: FitResult, quad: QuadratureRule) -> object:
    G, g = design_matrix(op, fit.basis, quad, fit.prec)
    return loss_value(G, g, fit.coefficients, fit.prec)


# ---------------------------------------------------------------------------
# perturbation ensembles


def perturbed_values(q, rho: float, rng: np.random.Generator, prec: Precision) -> np.ndarray:
    """``q (1 + eps)`` with ``eps`` uniform on ``(-rho, rho)``."""
    eps = rng.uniform(-rho, rho, size=len(q))
    return prec.array([prec.real(qi) * (1 + prec.real(e)) for qi, e in zip(q, eps)])


def trial_generators(seed: int, trials: int) -> list[np.random.Generator]:
    """One independent PCG64 stream per trial, spawned from ``seed``."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(trials)]
