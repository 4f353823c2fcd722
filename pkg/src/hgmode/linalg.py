"""Dense linear algebra that works at any precision.

Matrices are numpy arrays, either float64 (native precision) or object arrays
holding extended-precision scalars.  Native square solves go through LAPACK;
everything else is written out so the same code runs on both kinds of array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .precision import Precision, get_precision


class SingularMatrixError(ArithmeticError):
    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is singular: zero pivot at index {pivot}")


class RankDeficiencyError(ArithmeticError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"least-squares matrix is numerically rank deficient at column {column}")


class ComplexSpectrumError(ArithmeticError):
    """The matrix has a complex conjugate pair of eigenvalues."""


class EigenTieError(ArithmeticError):
    """Two eigenvalues coincide to working precision."""


class ConvergenceError(ArithmeticError):
    pass


def precision_of(a: np.ndarray) -> Precision:
    """Infer the precision context from an array's contents."""
    if a.dtype != object:
        return get_precision(16)
    sample = a.flat[0]
    return get_precision(sample.context.dps)


def _norm_inf(a: np.ndarray):
    a = np.abs(a)
    return a.sum(axis=1).max() if a.ndim == 2 else a.max()


# LU -------------------------------------------------------------------

def _lu_generic(a: np.ndarray):
    """Partial-pivoting LU in place on an object array; returns (lu, perm)."""
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    for k in range(n):
        col = np.abs(lu[k:, k])
        p = k + int(np.argmax(col))
        if lu[p, k] == 0:
            raise SingularMatrixError(k)
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if k + 1 < n:
            lu[k + 1 :, k] = lu[k + 1 :, k] / lu[k, k]
            lu[k + 1 :, k + 1 :] -= np.outer(lu[k + 1 :, k], lu[k, k + 1 :])
    return lu, perm


def _lu_apply(lu, perm, b):
    n = lu.shape[0]
    y = b[perm].copy()
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            y[i] -= lu[i, i + 1 :] @ y[i + 1 :]
        y[i] = y[i] / lu[i, i]
    return y


def lu_solve(a: np.ndarray, b: np.ndarray):
    """Solve ``a x = b`` by LU with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides.  Returns ``(x,
    residual)`` where ``residual = ||a x - b|| / (||a|| ||x||)`` in the infinity
    norm.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"lu_solve needs a square matrix, got shape {a.shape}")
    if a.dtype != object:
        a = a.astype(np.float64)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        zero = np.flatnonzero(np.diag(lu) == 0)
        if zero.size:
            raise SingularMatrixError(int(zero[0]))
        x = scipy.linalg.lu_solve((lu, piv), b.astype(np.float64), check_finite=False)
    else:
        lu, perm = _lu_generic(a)
        x = _lu_apply(lu, perm, b)
    r = a @ x - b
    denom = _norm_inf(a) * _norm_inf(x)
    residual = _norm_inf(r) / denom if denom != 0 else _norm_inf(r)
    return x, residual


def condition_estimate(a: np.ndarray) -> float:
    """1-norm condition number estimate (LAPACK ``gecon`` for native arrays)."""
    if a.dtype != object:
        a = np.asarray(a, dtype=np.float64)
        anorm = np.abs(a).sum(axis=0).max()
        lu, _piv, info = scipy.linalg.lapack.dgetrf(a)
        if info > 0:
            return np.inf
        rcond, _ = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
        return np.inf if rcond == 0 else 1.0 / rcond
    prec = precision_of(a)
    inv, _ = lu_solve(a, prec.eye(a.shape[0]))
    return float(np.abs(a).sum(axis=0).max() * np.abs(inv).sum(axis=0).max())


# QR least squares ----------------------------------------------------------

def householder_qr(a: np.ndarray, b: np.ndarray | None = None, prec: Precision | None = None):
    """Householder triangularization of ``a``; returns ``(R, Q^T b)``."""
    prec = prec or precision_of(a)
    r = a.copy()
    qtb = None if b is None else b.copy()
    m, n = r.shape
    for k in range(n):
        x = r[k:, k]
        normx = prec.sqrt(np.sum(x * x))
        if normx == 0:
            continue
        alpha = -normx if x[0] >= 0 else normx
        v = x.copy()
        v[0] = v[0] - alpha
        vnorm2 = np.sum(v * v)
        if vnorm2 == 0:
            continue
        scale = 2 / vnorm2
        r[k:, k:] -= np.outer(v, (v @ r[k:, k:]) * scale)
        r[k + 1 :, k] = 0 * r[k, k]
        if qtb is not None:
            if qtb.ndim == 1:
                qtb[k:] -= v * ((v @ qtb[k:]) * scale)
            else:
                qtb[k:] -= np.outer(v, (v @ qtb[k:]) * scale)
    return r, qtb


def qr_least_squares(a: np.ndarray, b: np.ndarray, prec: Precision | None = None, rank_tol: float | None = None):
    """Minimize ``||a x - b||_2`` for a tall matrix ``a``.

    Returns ``(x, residual_norm)``.  Raises :class:`RankDeficiencyError` when a
    diagonal entry of ``R`` falls below ``rank_tol`` times the norm of the
    corresponding column.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    prec = prec or precision_of(a)
    m, n = a.shape
    if m < n:
        raise ValueError(f"least squares needs at least as many rows as columns, got {a.shape}")
    colnorm = np.sqrt(np.sum(prec.to_float(np.abs(a)) ** 2, axis=0))
    if not np.any(colnorm > 0):
        raise ValueError("all columns of the least-squares matrix are zero")
    if rank_tol is None:
        rank_tol = 10 * max(m, n) * prec.eps
    r, qtb = householder_qr(a, b, prec)
    diag = np.abs(prec.to_float(np.diag(r)))
    for k in range(n):
        if not diag[k] > rank_tol * colnorm[k]:
            raise RankDeficiencyError(k)
    x = qtb[:n].copy()
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= r[i, i + 1 : n] @ x[i + 1 :]
        x[i] = x[i] / r[i, i]
    res = a @ x - b
    return x, prec.sqrt(np.sum(res * res))


# Eigenvalues -----------------------------------------------------------

@dataclass(frozen=True)
class EigenDecomposition:
    """Real eigen system: eigenvalues descending, eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual: float

    def __iter__(self):
        return iter((self.eigenvalues, self.eigenvectors))


def hessenberg(a: np.ndarray, prec: Precision) -> np.ndarray:
    """Reduce to upper Hessenberg form by Householder similarity transforms."""
    h = a.copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1 :, k]
        normx = prec.sqrt(np.sum(x * x))
        if normx == 0:
            continue
        alpha = -normx if x[0] >= 0 else normx
        v = x.copy()
        v[0] = v[0] - alpha
        vnorm2 = np.sum(v * v)
        if vnorm2 == 0:
            continue
        scale = 2 / vnorm2
        h[k + 1 :, :] -= np.outer(v, (v @ h[k + 1 :, :]) * scale)
        h[:, k + 1 :] -= np.outer(h[:, k + 1 :] @ v * scale, v)
        h[k + 2 :, k] = 0 * h[k, k]
    return h


def _sign(a, b):
    return abs(a) if b >= 0 else -abs(a)


def hessenberg_eigenvalues(h: np.ndarray, prec: Precision, max_sweeps: int | None = None) -> list:
    """Eigenvalues of a real upper Hessenberg matrix (Francis double-shift QR).

    Raises :class:`ComplexSpectrumError` when a 2x2 block with negative
    discriminant is deflated.
    """
    n = h.shape[0]
    if max_sweeps is None:
        max_sweeps = 100 * n * n
    zero = prec.real(0)
    # 1-based nested lists: much faster than element access on object arrays
    a = [[zero] * (n + 1)] + [[zero] + list(row) for row in h]
    anorm = zero
    for i in range(1, n + 1):
        for j in range(max(i - 1, 1), n + 1):
            anorm += abs(a[i][j])
    wr = [zero] * (n + 1)
    nn = n
    t = zero
    sweeps = 0
    while nn >= 1:
        its = 0
        while True:
            l = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1][ll - 1]) + abs(a[ll][ll])
                if s == 0:
                    s = anorm
                if abs(a[ll][ll - 1]) + s == s:
                    a[ll][ll - 1] = zero
                    l = ll
                    break
            x = a[nn][nn]
            if l == nn:
                wr[nn] = x + t
                nn -= 1
            else:
                y = a[nn - 1][nn - 1]
                w = a[nn][nn - 1] * a[nn - 1][nn]
                if l == nn - 1:
                    p = (y - x) / 2
                    q = p * p + w
                    if q < 0:
                        raise ComplexSpectrumError(
                            "complex conjugate eigenvalue pair detected; defusing needs a real spectrum"
                        )
                    z = prec.sqrt(q)
                    x = x + t
                    z = p + _sign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0:
                        wr[nn] = x - w / z
                    nn -= 2
                else:
                    if sweeps >= max_sweeps:
                        raise ConvergenceError(f"QR iteration did not converge in {max_sweeps} sweeps")
                    if its and its % 10 == 0:
                        # exceptional shift
                        t = t + x
                        for i in range(1, nn + 1):
                            a[i][i] -= x
                        s = abs(a[nn][nn - 1]) + abs(a[nn - 1][nn - 2])
                        x = y = s * 3 / 4
                        w = -s * s * 7 / 16
                    its += 1
                    sweeps += 1
                    m = nn - 2
                    while m >= l:
                        z = a[m][m]
                        r = x - z
                        s = y - z
                        p = (r * s - w) / a[m + 1][m] + a[m][m + 1]
                        q = a[m + 1][m + 1] - z - r - s
                        r = a[m + 2][m + 1]
                        s = abs(p) + abs(q) + abs(r)
                        p, q, r = p / s, q / s, r / s
                        if m == l:
                            break
                        u = abs(a[m][m - 1]) * (abs(q) + abs(r))
                        v = abs(p) * (abs(a[m - 1][m - 1]) + abs(z) + abs(a[m + 1][m + 1]))
                        if u + v == v:
                            break
                        m -= 1
                    for i in range(m + 2, nn + 1):
                        a[i][i - 2] = zero
                        if i != m + 2:
                            a[i][i - 3] = zero
                    for k in range(m, nn):
                        if k != m:
                            p = a[k][k - 1]
                            q = a[k + 1][k - 1]
                            r = a[k + 2][k - 1] if k != nn - 1 else zero
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0:
                                p, q, r = p / x, q / x, r / x
                        s = _sign(prec.sqrt(p * p + q * q + r * r), p)
                        if s != 0:
                            if k == m:
                                if l != m:
                                    a[k][k - 1] = -a[k][k - 1]
                            else:
                                a[k][k - 1] = -s * x
                            p = p + s
                            x = p / s
                            y = q / s
                            z = r / s
                            q = q / p
                            r = r / p
                            for j in range(k, nn + 1):
                                p = a[k][j] + q * a[k + 1][j]
                                if k != nn - 1:
                                    p = p + r * a[k + 2][j]
                                    a[k + 2][j] -= p * z
                                a[k + 1][j] -= p * y
                                a[k][j] -= p * x
                            mmin = nn if nn < k + 3 else k + 3
                            for i in range(l, mmin + 1):
                                p = x * a[i][k] + y * a[i][k + 1]
                                if k != nn - 1:
                                    p = p + z * a[i][k + 2]
                                    a[i][k + 2] -= p * r
                                a[i][k + 1] -= p * q
                                a[i][k] -= p
            if not (nn >= 1 and l < nn - 1):
                break
    return wr[1:]


def _inverse_iteration(q: np.ndarray, lam, prec: Precision, qnorm, sweeps: int = 3) -> np.ndarray:
    n = q.shape[0]
    m = [[q[i][j] - (lam if i == j else 0) for j in range(n)] for i in range(n)]
    tiny = qnorm * prec.eps if qnorm != 0 else prec.real(prec.eps)
    # LU with partial pivoting, tiny pivots replaced (the matrix is singular by design)
    perm = list(range(n))
    for k in range(n):
        p = max(range(k, n), key=lambda i: abs(m[i][k]))
        if p != k:
            m[k], m[p] = m[p], m[k]
            perm[k], perm[p] = perm[p], perm[k]
        if abs(m[k][k]) < tiny:
            m[k][k] = tiny
        for i in range(k + 1, n):
            f = m[i][k] / m[k][k]
            m[i][k] = f
            for j in range(k + 1, n):
                m[i][j] -= f * m[k][j]
    x = [prec.real(1)] * n
    for _ in range(sweeps):
        y = [x[i] for i in perm]
        for i in range(n):
            for j in range(i):
                y[i] -= m[i][j] * y[j]
        for i in range(n - 1, -1, -1):
            for j in range(i + 1, n):
                y[i] -= m[i][j] * y[j]
            y[i] = y[i] / m[i][i]
        big = max(y, key=abs)
        x = [v / big for v in y]
    return prec.array(x)


def real_eigen(q: np.ndarray, prec: Precision | None = None, tol_eig: float | None = None) -> EigenDecomposition:
    """Eigenvalues and eigenvectors of a real matrix with a real, simple spectrum.

    Eigenvalues come back ordered by decreasing magnitude (for a positive
    spectrum this is plain descending order).  Each eigenvector is scaled so
    its largest-magnitude component equals +1.
    """
    q = np.asarray(q)
    prec = prec or precision_of(q)
    q = prec.asarray(q)
    n = q.shape[0]
    if q.shape != (n, n):
        raise ValueError(f"eigen decomposition needs a square matrix, got {q.shape}")
    if n > 64:
        raise ValueError("eigen decomposition is limited to r <= 64")
    tol_eig = prec.tol(4) if tol_eig is None else tol_eig
    lams = sorted(hessenberg_eigenvalues(hessenberg(q, prec), prec), key=lambda x: (abs(x), x), reverse=True)
    tie = prec.tol(4)
    for a, b in zip(lams, lams[1:]):
        if abs(abs(a) - abs(b)) <= tie * abs(a):
            raise EigenTieError(f"eigenvalues {prec.format(a)} and {prec.format(b)} are not distinct")
    qnorm = _norm_inf(q)
    vecs = prec.zeros((n, n))
    worst = 0.0
    for i, lam in enumerate(lams):
        v = _inverse_iteration(q, lam, prec, qnorm)
        vecs[:, i] = v
        res = float(_norm_inf(q @ v - lam * v) / qnorm) if qnorm != 0 else 0.0
        worst = max(worst, res)
    if worst > tol_eig:
        raise ConvergenceError(f"eigen residual {worst:.3e} exceeds tolerance {tol_eig:.1e}")
    return EigenDecomposition(prec.array(lams), vecs, worst)
