"""Smallest eigenpair of symmetric 3x3 matrices.

The closed-form path uses the trigonometric solution of the characteristic
cubic and recovers the eigenvector from cross products of the rows of
``M - lambda I``.  Matrices whose spectrum is (nearly) repeated fall back to
cyclic Jacobi rotations, which are slower but have no such blind spot.
"""

from __future__ import annotations

import math

import numpy as np

# Relative spread of the spectrum below which the cubic's discriminant is
# considered degenerate and Jacobi is used instead.
DEGENERATE_SPREAD = 1e-7


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition by cyclic Jacobi rotations.

    Returns ascending eigenvalues and the matching eigenvectors as columns.
    """
    A = np.array(A, dtype=float)
    V = np.eye(3)
    for _ in range(max_sweeps):
        off = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
        if off <= tol * tol * max(np.sum(A * A), np.finfo(float).tiny):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[p, q]
            if apq == 0.0:
                continue
            tau = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = t * c
            J = np.eye(3)
            J[p, p] = J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            V = V @ J
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def _cubic_eigenvalues(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ascending eigenvalues of a batch ``(m, 3, 3)`` plus the spectrum spread ``p``."""
    q = np.trace(M, axis1=1, axis2=2) / 3.0
    off = M[:, 0, 1] ** 2 + M[:, 0, 2] ** 2 + M[:, 1, 2] ** 2
    d = np.stack([M[:, 0, 0], M[:, 1, 1], M[:, 2, 2]], axis=1) - q[:, None]
    p = np.sqrt((np.sum(d * d, axis=1) + 2.0 * off) / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    B = (M - q[:, None, None] * np.eye(3)) / safe_p[:, None, None]
    r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    return np.stack([lo, mid, hi], axis=1), p, q


def _null_vector(A: np.ndarray) -> np.ndarray:
    """Unit vector spanning the (approximate) null space of rank-2 matrices ``A``."""
    r0, r1, r2 = A[:, 0], A[:, 1], A[:, 2]
    c = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    n2 = np.einsum("mkj,mkj->mk", c, c)
    best = np.argmax(n2, axis=1)
    v = c[np.arange(len(A)), best]
    return v / np.sqrt(n2[np.arange(len(A)), best])[:, None]


def min_eig_batch(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smallest eigenpair for a batch of symmetric 3x3 matrices.

    Returns ``(eigenvalues (m, 3) ascending, min eigenvectors (m, 3), closed_form mask)``.
    Entries where the closed form was unreliable were solved with Jacobi.
    """
    M = np.asarray(M, dtype=float).reshape(-1, 3, 3)
    scale = np.abs(M).max(axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    Ms = M / scale[:, None, None]
    w, p, _ = _cubic_eigenvalues(Ms)
    gap_lo = w[:, 1] - w[:, 0]
    ok = gap_lo > DEGENERATE_SPREAD * np.maximum(p, np.finfo(float).tiny)
    ok &= p > 0
    v = np.zeros((len(M), 3))
    if np.any(ok):
        A = Ms[ok] - w[ok, 0][:, None, None] * np.eye(3)
        v[ok] = _null_vector(A)
    for i in np.flatnonzero(~ok):
        wi, Vi = jacobi_eigh(Ms[i])
        w[i] = wi
        v[i] = Vi[:, 0]
    return w * scale[:, None], v, ok


def min_eig(M) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and a unit eigenvector of one symmetric 3x3 matrix.

    For a repeated smallest eigenvalue any unit vector of the eigenspace may
    be returned.
    """
    w, v, _ = min_eig_batch(M)
    return float(w[0, 0]), v[0]


def eigvals(M) -> np.ndarray:
    """Ascending eigenvalues of one symmetric 3x3 matrix."""
    w, _, _ = min_eig_batch(M)
    return w[0]
