"""Metric scale for a unit translation direction from triangulation and depth maps.

Matches are triangulated with the F2F rotation and a baseline of the
predicted translation length.  Their scale relative to points lifted from a
depth map is fit with a seeded RANSAC; the predicted translation is kept
whenever the cheirality or scale gates fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .se3 import InvalidInput, RigidMotion

# sin of the angle between rays below which triangulation is degenerate
PARALLEL_RAYS = 1e-9


class InsufficientPoints(ValueError):
    pass


@dataclass(frozen=True)
class ScaleAlignConfig:
    rounds: int = 10
    sample_fraction: float = 0.8
    inlier_threshold: float = 1e-3
    min_cheirality: float = 0.51
    max_delta: float = 0.5
    seed: int = 0
    # per-round cap on single-point scale hypotheses that are scored
    max_hypotheses: int = 256

    def __post_init__(self):
        if self.rounds < 1 or self.max_hypotheses < 1:
            raise ValueError("rounds and max_hypotheses must be >= 1")
        for name in ("sample_fraction", "min_cheirality"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not (self.inlier_threshold > 0 and self.max_delta > 0):
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class Triangulation:
    points: np.ndarray  # (n, 3) midpoints in camera-1 coordinates
    depth1: np.ndarray  # signed distance along f
    depth2: np.ndarray  # signed distance along R f'
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.depth1)


@dataclass(frozen=True)
class ScaleResult:
    scale: float
    delta: float
    cheirality: float
    accepted: bool
    translation: Optional[np.ndarray]  # None means: keep the predicted translation

    def __post_init__(self):
        if self.accepted and self.translation is None:
            raise ValueError("an accepted result needs a translation")


def triangulate(f, f_prime, motion: RigidMotion) -> Triangulation:
    """Midpoint triangulation of rays ``(0, f)`` and ``(t, R f')``.

    ``motion`` maps camera-2 coordinates into camera 1.  Bearings are
    ``(3,)`` or ``(n, 3)`` unit vectors.
    """
    t = motion.translation
    if not np.any(t):
        raise InvalidInput("triangulation needs a non-zero baseline")
    f = np.atleast_2d(np.asarray(f, dtype=float))
    d = np.atleast_2d(np.asarray(f_prime, dtype=float)) @ motion.rotation.T
    c = np.einsum("ij,ij->i", f, d)
    sin = np.linalg.norm(np.cross(f, d), axis=1)
    degenerate = sin < PARALLEL_RAYS
    ft, dt = f @ t, d @ t
    den = np.where(degenerate, 1.0, sin * sin)
    a = np.where(degenerate, np.nan, (ft - c * dt) / den)
    b = np.where(degenerate, np.nan, (c * ft - dt) / den)
    points = 0.5 * (a[:, None] * f + t + b[:, None] * d)
    return Triangulation(points, a, b, degenerate)


def cheirality_filter(tri: Triangulation) -> tuple[np.ndarray, float]:
    """Mask of points in front of both cameras and the kept fraction (0 when empty)."""
    keep = ~tri.degenerate & (np.nan_to_num(tri.depth1) > 0) & (np.nan_to_num(tri.depth2) > 0)
    frac = float(keep.mean()) if len(keep) else 0.0
    return keep, frac


def _round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, round_index]))


def _fit_round(X, Y, nx, ny, cfg: ScaleAlignConfig, rng) -> float:
    n = len(X)
    m = max(3, int(math.ceil(cfg.sample_fraction * n)))
    idx = np.sort(rng.choice(n, size=min(m, n), replace=False))
    x, y, sx, sy = X[idx], Y[idx], nx[idx], ny[idx]
    hyp_idx = rng.permutation(len(idx))[: cfg.max_hypotheses]
    hyps = sy[hyp_idx] / sx[hyp_idx]
    tol = cfg.inlier_threshold * sy
    counts = (np.abs(sy[None, :] - hyps[:, None] * sx[None, :]) <= tol[None, :]).sum(axis=1)
    s = hyps[int(np.argmax(counts))]
    for _ in range(2):
        inl = np.abs(sy - s * sx) <= tol
        if not inl.any():
            break
        s = float(np.sum(x[inl] * y[inl]) / np.sum(x[inl] * x[inl]))
    return float(s)


def ransac_scale(X, Y, cfg: ScaleAlignConfig = ScaleAlignConfig()) -> tuple[float, float]:
    """Fit ``Y ~ s X`` with seeded rounds; returns the round's ``(s, |1 - s|)`` closest to 1.

    Each round samples a fraction of the correspondences, scores single-point
    norm ratios by how many sampled points they explain within the relative
    threshold, and refits ``s`` by least squares over the winner's inliers.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    if len(X) != len(Y):
        raise ValueError("point sets must correspond index-wise")
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    ok = np.isfinite(nx) & np.isfinite(ny) & (nx > 0) & (ny > 0)
    X, Y, nx, ny = X[ok], Y[ok], nx[ok], ny[ok]
    if len(X) < 3:
        raise InsufficientPoints(f"need at least 3 correspondences, got {len(X)}")
    best = None
    for r in range(cfg.rounds):
        s = _fit_round(X, Y, nx, ny, cfg, _round_rng(cfg.seed, r))
        if best is None or abs(1.0 - s) < abs(1.0 - best):
            best = s
    return best, abs(1.0 - best)


def scale_decision(scale: float, delta: float, cheirality: float, predicted_translation, direction,
                   cfg: ScaleAlignConfig = ScaleAlignConfig()) -> ScaleResult:
    """Apply the cheirality and delta gates.

    On acceptance the translation is ``s * |t_pred| * direction``; otherwise the
    result carries no translation and the caller keeps ``t_pred``.
    """
    ok = cheirality >= cfg.min_cheirality and np.isfinite(delta) and delta <= cfg.max_delta
    if not ok:
        return ScaleResult(scale, delta, cheirality, False, None)
    baseline = float(np.linalg.norm(predicted_translation))
    d = np.asarray(direction, dtype=float)
    return ScaleResult(scale, delta, cheirality, True, scale * baseline * d / np.linalg.norm(d))


def depth_points(f, depth) -> np.ndarray:
    """Lift bearings with z-depths: ``f / f_z * z``."""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    z = np.asarray(depth, dtype=float).reshape(-1)
    return f / f[:, 2:3] * z[:, None]


def align_scale(f, f_prime, depth, rotation, direction, predicted_translation,
                cfg: ScaleAlignConfig = ScaleAlignConfig(), disambiguate_sign: bool = True) -> ScaleResult:
    """Scale the F2F direction against depth-map points of the first view.

    ``depth`` holds the first view's z-depth at each match (non-positive means
    unknown).  With ``disambiguate_sign`` the direction sign with the larger
    cheirality fraction is used.
    """
    f = np.atleast_2d(np.asarray(f, dtype=float))
    baseline = float(np.linalg.norm(predicted_translation))
    if baseline == 0:
        raise InvalidInput("predicted translation must be non-zero")
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    signs = (1.0, -1.0) if disambiguate_sign else (1.0,)
    best = None
    for sign in signs:
        tri = triangulate(f, f_prime, RigidMotion(rotation, sign * baseline * d))
        keep, frac = cheirality_filter(tri)
        if best is None or frac > best[2]:
            best = (sign, tri, frac, keep)
    sign, tri, frac, keep = best
    z = np.asarray(depth, dtype=float).reshape(-1)
    usable = keep & np.isfinite(z) & (z > 0)
    try:
        s, delta = ransac_scale(tri.points[usable], depth_points(f[usable], z[usable]), cfg)
    except InsufficientPoints:
        return ScaleResult(math.nan, math.inf, frac, False, None)
    return scale_decision(s, delta, frac, predicted_translation, sign * d, cfg)
