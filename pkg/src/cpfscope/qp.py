"""Contact quadratic program and its likelihood.

For a hypothesised contact, the program

    min_{alpha >= 0} (G_E - Adj B alpha)^T Sigma^-1 (G_E - Adj B alpha)

is a nonnegative least-squares problem in the whitened variables
``W Adj B alpha ~ W G_E`` with ``W = Sigma^{-1/2}``. ``B`` stacks the friction
cone edges as force rows over three zero moment rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .mechanics import ContactAdjoint, FrictionCone, FrameError, Wrench

FORCE_VAR_FLOOR = 1e-8
MOMENT_VAR_FLOOR = 1e-10
KKT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SensorNoise:
    """Diagonal wrench covariance ``[Fx, Fy, Fz, Mx, My, Mz]`` (N^2, (N m)^2)."""

    sigma_diag: np.ndarray

    def __post_init__(self):
        v = np.array(self.sigma_diag, dtype=float).reshape(6)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("variances must be finite and nonnegative")
        v[:3] = np.maximum(v[:3], FORCE_VAR_FLOOR)
        v[3:] = np.maximum(v[3:], MOMENT_VAR_FLOOR)
        v.flags.writeable = False
        object.__setattr__(self, "sigma_diag", v)

    @classmethod
    def isotropic(cls, sigma_force: float, sigma_moment: float) -> SensorNoise:
        return cls(np.r_[np.full(3, sigma_force**2), np.full(3, sigma_moment**2)])

    @property
    def whitening(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.sigma_diag)

    def scaled(self, c: float) -> SensorNoise:
        return SensorNoise(self.sigma_diag * c)


@dataclass(frozen=True, eq=False)
class ContactQpResult:
    alpha: np.ndarray
    gamma_c: Wrench
    predicted_ee: Wrench
    residual: float
    kkt_gap: float


class QpInputError(ValueError):
    pass


@numba.njit(cache=True)
def _free_solve(A, b, G, Atb, idx):
    """Least squares on the columns ``idx``.

    Cholesky on the Gram submatrix with one refinement sweep; falls back to
    the minimum-norm solution when the columns are (nearly) dependent.
    """
    p = len(idx)
    L = np.zeros((p, p))
    scale = 0.0
    for a in range(p):
        scale = max(scale, G[idx[a], idx[a]])
    for a in range(p):
        for c in range(a + 1):
            acc = G[idx[a], idx[c]]
            for k in range(c):
                acc -= L[a, k] * L[c, k]
            if a == c:
                if acc <= 1e-12 * scale:
                    return np.linalg.lstsq(A[:, idx], b)[0]
                L[a, a] = np.sqrt(acc)
            else:
                L[a, c] = acc / L[c, c]
    m = A.shape[0]
    rhs = np.empty(p)
    for a in range(p):
        rhs[a] = Atb[idx[a]]
    x = _chol_solve(L, rhs)
    r = b.copy()
    for a in range(p):
        for row in range(m):
            r[row] -= A[row, idx[a]] * x[a]
    for a in range(p):
        acc = 0.0
        for row in range(m):
            acc += A[row, idx[a]] * r[row]
        rhs[a] = acc
    x += _chol_solve(L, rhs)
    return x


@numba.njit(cache=True)
def _ax(A, x):
    m, n = A.shape
    out = np.zeros(m)
    for j in range(n):
        if x[j] != 0.0:
            for row in range(m):
                out[row] += A[row, j] * x[j]
    return out


@numba.njit(cache=True)
def _atr(A, r):
    m, n = A.shape
    out = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for row in range(m):
            acc += A[row, j] * r[row]
        out[j] = acc
    return out


@numba.njit(cache=True)
def _chol_solve(L, rhs):
    p = len(rhs)
    y = np.empty(p)
    for a in range(p):
        acc = rhs[a]
        for k in range(a):
            acc -= L[a, k] * y[k]
        y[a] = acc / L[a, a]
    x = np.empty(p)
    for a in range(p - 1, -1, -1):
        acc = y[a]
        for k in range(a + 1, p):
            acc -= L[k, a] * x[k]
        x[a] = acc / L[a, a]
    return x


@numba.njit(cache=True)
def _nnls(A, b, tol):
    """Lawson-Hanson active-set NNLS.

    Returns ``(x, kkt)`` where ``kkt`` is the largest violation of
    stationarity on the free set and dual feasibility on the bound set, in
    units of the gradient ``A^T (A x - b)``.
    """
    m, n = A.shape
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            acc = 0.0
            for row in range(m):
                acc += A[row, i] * A[row, j]
            G[i, j] = acc
            G[j, i] = acc
    Atb = _atr(A, b)
    x = np.zeros(n)
    free = np.zeros(n, dtype=np.bool_)
    w = Atb.copy()
    for _outer in range(3 * n + 3):
        j = -1
        best = tol
        for i in range(n):
            if not free[i] and w[i] > best:
                best = w[i]
                j = i
        if j < 0:
            break
        free[j] = True
        for _inner in range(3 * n + 3):
            idx = np.flatnonzero(free)
            s_free = _free_solve(A, b, G, Atb, idx)
            if np.all(s_free > 0.0):
                x[:] = 0.0
                x[idx] = s_free
                break
            # step back to the feasible boundary
            step = 1.0
            for k in range(len(idx)):
                if s_free[k] <= 0.0:
                    xi = x[idx[k]]
                    t = xi / (xi - s_free[k])
                    if t < step:
                        step = t
            for k in range(len(idx)):
                i = idx[k]
                x[i] = x[i] + step * (s_free[k] - x[i])
                if x[i] <= 1e-15 * (1.0 + abs(s_free[k])):
                    x[i] = 0.0
                    free[i] = False
            if not np.any(free):
                break
        w = _atr(A, b - _ax(A, x))
    grad = -_atr(A, b - _ax(A, x))
    kkt = 0.0
    for i in range(n):
        if free[i] or x[i] > 0.0:
            v = abs(grad[i])
        else:
            v = -grad[i]
        if v > kkt:
            kkt = v
    return x, kkt


@numba.njit(cache=True)
def _nnls_batch(M, rhs, tol):
    k, m, n = M.shape
    alpha = np.zeros((k, n))
    resid = np.zeros(k)
    kkt = np.zeros(k)
    for i in range(k):
        A = np.ascontiguousarray(M[i])
        b = np.ascontiguousarray(rhs[i])
        x, g = _nnls(A, b, tol)
        r = b - _ax(A, x)
        alpha[i] = x
        resid[i] = r @ r
        kkt[i] = g
    return alpha, resid, kkt


def nnls(A, b, tol: float | None = None):
    """Solve ``min ||A x - b||^2, x >= 0``; returns ``(x, residual, kkt_gap)``."""
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise QpInputError("non-finite QP input")
    if tol is None:
        tol = _entry_tol(A, b)
    x, kkt = _nnls(A, b, tol)
    r = b - A @ x
    return x, float(r @ r), float(kkt)


def _entry_tol(A, b) -> float:
    scale = np.abs(A).max(initial=0.0) * np.abs(b).max(initial=0.0)
    return 1e-14 * max(1.0, scale)


def nnls_batch(M, rhs):
    """Batched :func:`nnls` over stacked ``M[k]`` (k, m, n) and ``rhs[k]`` (k, m)."""
    M = np.ascontiguousarray(M, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(rhs))):
        raise QpInputError("non-finite QP input")
    return _nnls_batch(M, rhs, _entry_tol(M, rhs))


def cone_matrix(edges) -> np.ndarray:
    """6 x N_f map from cone coefficients to a contact-frame wrench with zero moment."""
    E = np.asarray(edges, dtype=float)
    B = np.zeros((6, len(E)))
    B[:3] = E.T
    return B


def solve_contact_qp(
    gamma_e: Wrench, adj: ContactAdjoint, cone: FrictionCone, noise: SensorNoise
) -> ContactQpResult:
    """Best nonnegative cone combination explaining ``gamma_e``.

    ``cone.edges`` must be expressed in the adjoint's source (contact) frame.
    """
    if gamma_e.frame != adj.target:
        raise FrameError(f"wrench frame {gamma_e.frame!r} != adjoint target {adj.target!r}")
    if not np.all(np.isfinite(cone.edges)):
        raise QpInputError("non-finite cone edges")
    W = noise.whitening
    B = cone_matrix(cone.edges)
    AB = adj.matrix @ B
    alpha, residual, kkt = nnls(W[:, None] * AB, W * gamma_e.vector)
    gamma_c = Wrench.from_vector(B @ alpha, adj.source)
    predicted = Wrench.from_vector(AB @ alpha, adj.target)
    return ContactQpResult(alpha, gamma_c, predicted, residual, kkt)


def contact_likelihood(residual):
    """Unnormalized likelihood ``exp(-residual / 2)``."""
    return np.exp(-0.5 * np.asarray(residual, dtype=float))


def normalized_likelihoods(residuals) -> np.ndarray:
    """``exp(-r/2)`` normalized over the set, computed relative to the smallest residual."""
    r = np.asarray(residuals, dtype=float)
    w = np.exp(-0.5 * (r - r.min()))
    return w / w.sum()
