"""Frame-to-frame rotation solver based on the epipolar-plane normals.

For matched unit bearings ``(f_i, f'_i)`` every normal ``n_i = f_i x R f'_i``
is orthogonal to the baseline at the true rotation, so the 3x3 matrix
``M = N N^T`` loses rank.  The solver minimizes the smallest eigenvalue of
``M`` over ``R`` with Levenberg-Marquardt; the associated eigenvector is the
translation direction (up to sign).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .eigen3 import min_eig_batch
from .se3 import RigidMotion, so3_exp, so3_exp_batch, so3_log


class InsufficientMatches(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


MIN_PAIRS = 5


@dataclass(frozen=True)
class BearingPairSet:
    """Matched unit bearings for one frame pair, stored as ``(n, 3)`` arrays."""

    f: np.ndarray
    f_prime: np.ndarray
    confidence: Optional[np.ndarray] = None
    frames: Optional[tuple[int, int]] = None

    def __post_init__(self):
        f = np.array(self.f, dtype=float).reshape(-1, 3)
        fp = np.array(self.f_prime, dtype=float).reshape(-1, 3)
        if f.shape != fp.shape:
            raise ValueError("bearing arrays must have the same shape")
        for b in (f, fp):
            if len(b) and np.abs(np.linalg.norm(b, axis=1) - 1.0).max() > 1e-9:
                raise ValueError("bearings must be unit vectors")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "f_prime", fp)
        if self.confidence is not None:
            c = np.array(self.confidence, dtype=float).reshape(-1)
            if c.shape != (len(f),):
                raise ValueError("one confidence per pair expected")
            object.__setattr__(self, "confidence", c)

    def __len__(self) -> int:
        return len(self.f)

    def filtered(self, threshold: float) -> "BearingPairSet":
        """Pairs with confidence >= threshold (all pairs when no confidences)."""
        if self.confidence is None:
            return self
        keep = self.confidence >= threshold
        return BearingPairSet(self.f[keep], self.f_prime[keep], self.confidence[keep], self.frames)


@dataclass(frozen=True)
class F2FConfig:
    """Solver settings.

    The defaults take noiseless problems to ``lambda_min`` below 1e-16 in well
    under 50 iterations.  Restarts are described in :func:`solve_f2f`.  ``fd_step`` is the central-difference step used for
    both the gradient and the second differences.  ``objective_tol`` is
    relative to the current objective, so it stays meaningful whether the
    minimum is exactly zero (noiseless data) or not.
    """

    max_iterations: int = 100
    param_tol: float = 1e-10
    objective_tol: float = 1e-12
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    fd_step: float = 1e-7
    max_step: float = 0.2
    confidence_threshold: float = 0.9
    # lambda_min <= certificate_tol * n proves a global minimum (lambda_min >= 0)
    certificate_tol: float = 1e-14
    # uncertified solutions get up to this many rounds of restarts (0 disables)
    restart_rounds: int = 3
    restart_radius: float = 0.1

    def __post_init__(self):
        for name, value in vars(self).items():
            if name == "restart_rounds":
                if value < 0:
                    raise ValueError("restart_rounds must be >= 0")
            elif not value > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class F2FSolution:
    rotation: np.ndarray
    translation_direction: np.ndarray
    lambda_min: float
    iterations: int
    converged: bool
    # objective after each accepted step, starting with the initial value
    history: tuple = field(default=(), repr=False)
    n_used: int = 0
    restarts: int = 0


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class ConstantMotion:
    """Start from the rotation solved for the previous frame pair."""

    previous: Union[F2FSolution, np.ndarray, None]

    def __post_init__(self):
        if self.previous is None:
            raise ValueError("constant-motion initialization needs a previous solution")


@dataclass(frozen=True)
class Prior:
    rotation: np.ndarray


InitMode = Union[Identity, ConstantMotion, Prior]


def initial_rotation(init: Optional[InitMode]) -> np.ndarray:
    if init is None or isinstance(init, Identity):
        return np.eye(3)
    if isinstance(init, Prior):
        return np.array(init.rotation, dtype=float)
    if isinstance(init, ConstantMotion):
        prev = init.previous
        R = prev.rotation if isinstance(prev, F2FSolution) else prev
        return np.array(R, dtype=float)
    raise TypeError(f"unknown init mode {init!r}")


def _as_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, BearingPairSet):
        return pairs.f, pairs.f_prime
    f, fp = pairs
    return np.asarray(f, dtype=float).reshape(-1, 3), np.asarray(fp, dtype=float).reshape(-1, 3)


def epipolar_normals(pairs, R) -> np.ndarray:
    """``3 x n`` matrix whose column ``i`` is ``f_i x R f'_i``."""
    f, fp = _as_arrays(pairs)
    if len(f) == 0:
        raise InsufficientMatches("no bearing pairs")
    return np.cross(f, fp @ np.asarray(R, dtype=float).T).T


def covariance_min_eig(N) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and unit eigenvector of ``M = N N^T``.

    The eigenvector comes from the closed-form 3x3 solver; the eigenvalue is
    then re-evaluated as ``||N^T v||^2``, which is accurate to the last bits
    when ``M`` is nearly singular.
    """
    N = np.asarray(N, dtype=float).reshape(3, -1)
    _, v, _ = min_eig_batch(N @ N.T)
    v = v[0]
    r = v @ N
    return float(r @ r), v


def _lambda_batch(f: np.ndarray, fp: np.ndarray, Rs: np.ndarray):
    """Objective for a batch of rotations; returns (lambda_min, eigvecs, spectra)."""
    RF = Rs @ fp.T  # (m, 3, n)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    a, b, c = RF[:, 0], RF[:, 1], RF[:, 2]
    N = np.stack([fy * c - fz * b, fz * a - fx * c, fx * b - fy * a], axis=1)
    M = N @ N.transpose(0, 2, 1)
    w, v, _ = min_eig_batch(M)
    r = (v[:, :, None] * N).sum(axis=1)
    lam = (r * r).sum(axis=1)
    return lam, v, w


def objective(pairs, R) -> float:
    f, fp = _as_arrays(pairs)
    lam, _, _ = _lambda_batch(f, fp, np.asarray(R, dtype=float)[None])
    return float(lam[0])


def _stencil(h: float) -> np.ndarray:
    """Perturbations +-h e_i, then +-h e_i +-h e_j for the mixed second differences."""
    I = np.eye(3)
    rows = [s * h * I[i] for i in range(3) for s in (1, -1)]
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            rows.append(h * (si * I[i] + sj * I[j]))
    return np.array(rows)


def _derivatives(f, fp, R, lam0, h, stencil):
    """Central-difference gradient and Hessian of the objective at ``R``."""
    Rs = so3_exp_batch(stencil) @ R
    lam, _, _ = _lambda_batch(f, fp, Rs)
    if not np.all(np.isfinite(lam)):
        raise NumericalFailure("non-finite objective")
    plus, minus = lam[0:6:2], lam[1:6:2]
    g = (plus - minus) / (2.0 * h)
    H = np.diag((plus - 2.0 * lam0 + minus) / (h * h))
    for c, (i, j) in enumerate(((0, 1), (0, 2), (1, 2))):
        pp, pm, mp, mm = lam[6 + 4 * c : 10 + 4 * c]
        H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4.0 * h * h)
    return g, H


def _restart_offsets(radius: float) -> np.ndarray:
    I = np.eye(3)
    return np.array([s * radius * I[i] for i in range(3) for s in (1.0, -1.0)])


def _lm(f, fp, R, lam, v, cfg: F2FConfig, stencil):
    """Levenberg-Marquardt from ``R``; returns ``(R, lam, v, iterations, converged, history)``."""
    mu = cfg.initial_damping
    history = [lam]
    converged = lam == 0.0
    iterations = 0
    derivs = None
    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        if derivs is None:
            g, H = _derivatives(f, fp, R, lam, cfg.fd_step, stencil)
            # far from the minimum H can be indefinite; use |H| as the model
            w, V = np.linalg.eigh(H)
            w = np.abs(w)
            scale = max(float(w.max()), np.finfo(float).tiny)
            derivs = g, H, w, V
        g, H, w, V = derivs
        if not np.any(g):
            converged = True
            break
        delta = -V @ ((V.T @ g) / (w + mu * scale))
        norm = float(np.linalg.norm(delta))
        if norm > cfg.max_step:
            delta *= cfg.max_step / norm
            norm = cfg.max_step
        R_new = so3_exp(delta) @ R
        lam_new, v_new, _ = _lambda_batch(f, fp, R_new[None])
        lam_new = float(lam_new[0])
        if not math.isfinite(lam_new):
            raise NumericalFailure("non-finite objective")
        if lam_new < lam:
            predicted = -(g @ delta + 0.5 * delta @ H @ delta)
            gain = (lam - lam_new) / predicted if predicted > 0 else 0.0
            decrease = lam - lam_new
            R, lam, v = R_new, lam_new, v_new[0]
            history.append(lam)
            derivs = None
            if gain > 0.75:
                mu = max(mu * cfg.damping_down, 1e-15)
            elif gain < 0.25:
                mu *= cfg.damping_up
            if norm < cfg.param_tol or decrease <= cfg.objective_tol * lam:
                converged = True
        else:
            mu *= cfg.damping_up
            if norm < cfg.param_tol:
                # no representable improvement left
                converged = True
    return R, lam, v, iterations, converged, history


def _start(f, fp, R):
    lam, v, _ = _lambda_batch(f, fp, R[None])
    if not math.isfinite(lam[0]):
        raise NumericalFailure("non-finite objective at the initial rotation")
    return float(lam[0]), v[0]


def solve_f2f(pairs: BearingPairSet, init: Optional[InitMode] = None, cfg: F2FConfig = F2FConfig()) -> F2FSolution:
    """Minimize ``lambda_min(M(R))`` over rotations.

    Updates are left-multiplicative, ``R <- exp(delta) R``.  Each iteration
    builds the gradient and the curvature by central differences of the
    scalar objective, then solves the damped system
    ``(|H| + mu s I) delta = -g``, where ``|H|`` flips negative curvature and
    ``s`` is the largest curvature magnitude.  Steps longer than
    ``cfg.max_step`` radians are shortened.  A step is accepted only if the
    objective decreases, so the recorded history is non-increasing, and the
    damping follows the ratio of actual to predicted decrease.

    The objective has spurious local minima.  Because ``lambda_min >= 0``, a
    value below ``cfg.certificate_tol * n`` proves the minimum is global.
    Otherwise LM is restarted from the six rotations ``exp(+-r e_k) R`` around
    the best solution so far, for up to ``cfg.restart_rounds`` rounds while
    that keeps lowering the objective.  The result is the lowest objective
    seen; ``iterations`` counts every LM iteration, restarts included.
    No randomness is involved.
    """
    used = pairs.filtered(cfg.confidence_threshold) if isinstance(pairs, BearingPairSet) else BearingPairSet(*pairs)
    if len(used) < MIN_PAIRS:
        raise InsufficientMatches(f"{len(used)} pairs after filtering, need {MIN_PAIRS}")
    f, fp = used.f, used.f_prime
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(fp))):
        raise NumericalFailure("non-finite bearings")
    stencil = _stencil(cfg.fd_step)
    R0 = initial_rotation(init)
    R, lam, v, iterations, converged, history = _lm(f, fp, R0, *_start(f, fp, R0), cfg, stencil)
    certified = cfg.certificate_tol * len(used)
    restarts = 0
    for _ in range(cfg.restart_rounds):
        if lam <= certified:
            break
        best = None
        for offset in _restart_offsets(cfg.restart_radius):
            Rs = so3_exp(offset) @ R
            out = _lm(f, fp, Rs, *_start(f, fp, Rs), cfg, stencil)
            restarts += 1
            iterations += out[3]
            if best is None or out[1] < best[1]:
                best = out
            if best[1] <= certified:
                break
        # demand a real improvement so rounds cannot cycle on rounding noise
        if not best[1] < lam * (1.0 - 1e-9):
            break
        R, lam, v, converged = best[0], best[1], best[2], best[4]
        history.append(lam)

    R = _reorthonormalize(R)
    return F2FSolution(
        rotation=R,
        translation_direction=v / np.linalg.norm(v),
        lambda_min=max(lam, 0.0),
        iterations=iterations,
        converged=converged,
        history=tuple(history),
        n_used=len(used),
        restarts=restarts,
    )


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    return so3_exp(so3_log(R))


def translation_reliability(solution: Optional[F2FSolution], N, eps: Optional[float] = None) -> float:
    """Relative gap ``(lambda_mid - lambda_min) / max(lambda_mid, eps)`` of ``N N^T``.

    ``eps`` defaults to ``1e-8 * n``, i.e. epipolar normals shorter than about
    1e-4 count as noise.  A pure rotation solved to ~1e-7 rad leaves
    eigenvalues around ``1e-14 * n``, far under that floor.
    Values near 0 mean the translation direction is not observable.
    """
    N = np.asarray(N, dtype=float).reshape(3, -1)
    if eps is None:
        eps = 1e-8 * N.shape[1]
    w, _, _ = min_eig_batch(N @ N.T)
    lo, mid = max(float(w[0, 0]), 0.0), max(float(w[0, 1]), 0.0)
    if solution is not None:
        lo = min(lo, solution.lambda_min)
    gap = (mid - lo) / max(mid, eps)
    return float(min(1.0, max(0.0, gap)))


def adjust_pose(predicted: RigidMotion, f2f: F2FSolution) -> RigidMotion:
    """Replace the predicted rotation by the solver's, keep the predicted translation."""
    return RigidMotion(f2f.rotation, predicted.translation)


def rotation_residual(r_pn, r_f2f) -> float:
    """L1 distance between the axis-angle vectors of two rotations."""
    return float(np.abs(so3_log(r_f2f) - so3_log(r_pn)).sum())
