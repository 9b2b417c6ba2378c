"""Dense real linear algebra used throughout the package.

Matrices are plain 2-D ``float64`` numpy arrays (row-major). numpy supplies
storage and BLAS products; the factorizations themselves (Jacobi
eigendecomposition, Cholesky, pseudo-inverse, truncated SVD) live here so
that their numerical behaviour is fully under our control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LinalgError",
    "DimensionError",
    "InvalidInputError",
    "NotPositiveDefiniteError",
    "SymEig",
    "as_matrix",
    "sym_eig",
    "psd_eig",
    "cholesky",
    "spd_solve",
    "pseudo_inverse",
    "truncated_svd",
    "op_norm",
]

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
PSD_NEG_TOL = 1e-10


class LinalgError(ValueError):
    pass


class DimensionError(LinalgError):
    pass


class InvalidInputError(LinalgError):
    pass


class NotPositiveDefiniteError(LinalgError):
    pass


@dataclass(frozen=True)
class SymEig:
    """Eigenvalues in descending order and the orthogonal matrix of eigenvectors (as columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def _square(a, name: str = "matrix") -> np.ndarray:
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of 0..m-1 such that every pair (p, q) occurs exactly once per sweep.

    Pairs within one round are disjoint, so their rotations commute and can be
    applied simultaneously.
    """
    n = m + (m % 2)  # pad with a dummy player
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        ps, qs = [], []
        for i in range(n // 2):
            p, q = players[i], players[n - 1 - i]
            if p < m and q < m:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def sym_eig(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> SymEig:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as ``(a + a.T) / 2`` first. Sweeps use a
    round-robin ordering so each round rotates ``m // 2`` disjoint planes at
    once. Iteration stops when the off-diagonal Frobenius norm drops below
    ``tol * ||a||_F`` or after ``max_sweeps`` sweeps.
    """
    a = _square(a)
    m = a.shape[0]
    work = 0.5 * (a + a.T)
    v = np.eye(m)
    if m == 0:
        return SymEig(np.zeros(0), v)
    threshold = tol * np.linalg.norm(work)
    rounds = _round_robin(m)

    offdiag = ~np.eye(m, dtype=bool)

    def off_norm(x):
        return np.linalg.norm(x[offdiag])

    for _ in range(max_sweeps):
        if off_norm(work) <= threshold:
            break
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = work[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (work[q, q] - work[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            rp, rq = work[p, :], work[q, :]
            work[p, :] = c[:, None] * rp - s[:, None] * rq
            work[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = work[:, p], work[:, q]
            work[:, p] = cp * c - cq * s
            work[:, q] = cp * s + cq * c
            work[p, q] = 0.0
            work[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c

    evals = np.diag(work).copy()
    order = np.argsort(-evals, kind="stable")
    return SymEig(evals[order], v[:, order])


def psd_eig(a, neg_tol: float = PSD_NEG_TOL) -> SymEig:
    """``sym_eig`` for matrices that are PSD up to rounding.

    Eigenvalues in ``[-neg_tol * max(1, max|mu|), 0)`` are clamped to zero;
    anything more negative raises ``InvalidInputError``.
    """
    eig = sym_eig(a)
    mu = eig.eigenvalues
    if mu.size == 0:
        return eig
    scale = max(1.0, float(np.max(np.abs(mu))))
    if mu[-1] < -neg_tol * scale:
        raise InvalidInputError(f"matrix is not PSD: smallest eigenvalue {mu[-1]:.3e}")
    return SymEig(np.maximum(mu, 0.0), eig.eigenvectors)


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``."""
    a = _square(a)
    m = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(m):
        row = lower[j, :j]
        d = a[j, j] - row @ row
        if not d > 0.0:
            raise NotPositiveDefiniteError(f"non-positive pivot {d:.3e} at column {j}")
        ljj = np.sqrt(d)
        lower[j, j] = ljj
        if j + 1 < m:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ row) / ljj
    return lower


def _forward_sub(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.empty_like(b)
    for i in range(lower.shape[0]):
        y[i] = (b[i] - lower[i, :i] @ y[:i]) / lower[i, i]
    return y


def _backward_sub(upper: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.empty_like(y)
    for i in range(upper.shape[0] - 1, -1, -1):
        x[i] = (y[i] - upper[i, i + 1 :] @ x[i + 1 :]) / upper[i, i]
    return x


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides. Raises
    ``NotPositiveDefiniteError`` when factorization meets a non-positive pivot.
    """
    a = _square(a)
    b_arr = np.asarray(b, dtype=np.float64)
    vector = b_arr.ndim == 1
    rhs = b_arr[:, None] if vector else b_arr
    rhs = as_matrix(rhs, "rhs")
    if rhs.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, matrix is {a.shape[0]}x{a.shape[0]}")
    lower = cholesky(a)
    x = _backward_sub(lower.T, _forward_sub(lower, rhs))
    return x[:, 0] if vector else x


def pseudo_inverse(a, rel_cutoff: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``rel_cutoff * mu_max`` (including any negative
    rounding noise) are treated as zero.
    """
    a = _square(a)
    m = a.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    eig = sym_eig(a)
    mu, u = eig.eigenvalues, eig.eigenvectors
    mu_max = mu[0]
    if mu_max <= 0.0:
        return np.zeros((m, m))
    keep = mu >= rel_cutoff * mu_max
    uk = u[:, keep]
    return (uk / mu[keep]) @ uk.T


def truncated_svd(a, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``k`` singular triplets ``(U_k, s_k, V_k)`` with ``a ~= U_k diag(s_k) V_k.T``.

    Computed from the eigendecomposition of the smaller Gram matrix. Left or
    right vectors belonging to a zero singular value are returned as zero
    columns.
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if not 0 <= k <= min(rows, cols):
        raise DimensionError(f"k={k} out of range for a {rows}x{cols} matrix")
    if cols <= rows:
        eig = psd_eig(a.T @ a)
        v = eig.eigenvectors[:, :k]
        s = np.sqrt(eig.eigenvalues[:k])
        av = a @ v
        u = np.divide(av, s, out=np.zeros_like(av), where=s > 0)
    else:
        eig = psd_eig(a @ a.T)
        u = eig.eigenvectors[:, :k]
        s = np.sqrt(eig.eigenvalues[:k])
        atu = a.T @ u
        v = np.divide(atu, s, out=np.zeros_like(atu), where=s > 0)
    return u, s, v


def op_norm(a) -> float:
    """Largest singular value."""
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    return float(truncated_svd(a, 1)[1][0])
