"""Trajectory accumulation, similarity alignment and odometry error metrics.

Poses are camera-to-world ``RigidMotion`` objects.  Relative motions follow
``pose_{k+1} = pose_k o rel_k``.  Means use ``math.fsum`` so the result does
not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .se3 import RigidMotion, geodesic_angle

DEFAULT_SEGMENTS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


class DegenerateAlignment(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    poses: tuple
    indices: tuple = field(default=())

    def __post_init__(self):
        poses = tuple(self.poses)
        idx = tuple(int(i) for i in self.indices) if len(self.indices) else tuple(range(len(poses)))
        if len(idx) != len(poses):
            raise ValueError("one index per pose required")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def rotations(self) -> np.ndarray:
        return np.array([p.rotation for p in self.poses]).reshape(-1, 3, 3)


@dataclass(frozen=True)
class Sim3:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply_points(self, X) -> np.ndarray:
        return self.scale * np.asarray(X, dtype=float) @ self.rotation.T + self.translation

    def apply(self, traj: Trajectory) -> Trajectory:
        """Map every pose: ``R' = R_a R``, ``t' = s R_a t + T``."""
        poses = [
            RigidMotion(self.rotation @ p.rotation, self.scale * self.rotation @ p.translation + self.translation)
            for p in traj.poses
        ]
        return Trajectory(poses, traj.indices)


@dataclass(frozen=True)
class MetricsReport:
    t_err: float  # percent
    r_err: float  # degrees per 100 m
    ate: float  # meters
    rpe_m: float
    rpe_deg: float

    def as_dict(self) -> dict:
        return {"t_err": self.t_err, "r_err": self.r_err, "ATE": self.ate, "RPE_m": self.rpe_m,
                "RPE_deg": self.rpe_deg}


def accumulate(relative: Sequence[RigidMotion], first: Optional[RigidMotion] = None) -> Trajectory:
    poses = [first if first is not None else RigidMotion.identity()]
    for rel in relative:
        poses.append(poses[-1] @ rel)
    return Trajectory(poses)


def decompose(traj: Trajectory) -> list:
    """Relative motions between consecutive poses (inverse of :func:`accumulate`)."""
    return [a.inverse() @ b for a, b in zip(traj.poses, traj.poses[1:])]


def _check_pair(est: Trajectory, gt: Trajectory, min_len: int = 1):
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ ({len(est)} vs {len(gt)})")
    if est.indices != gt.indices:
        raise ValueError("frame indices differ")
    if len(est) < min_len:
        raise ValueError(f"need at least {min_len} poses")


def umeyama_align(est: Trajectory, gt: Trajectory, with_scale: bool = True) -> Sim3:
    """Least-squares similarity mapping est positions onto gt positions."""
    _check_pair(est, gt, 3)
    x, y = est.positions(), gt.positions()
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var_x = float(np.mean(np.sum(xc * xc, axis=1)))
    if var_x <= 1e-300:
        raise DegenerateAlignment("estimated positions have zero variance")
    cov = yc.T @ xc / len(x)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.sum(D * np.diag(S)) / var_x) if with_scale else 1.0
    return Sim3(s, R, my - s * R @ mx)


def align(est: Trajectory, gt: Trajectory, mode: str = "7dof") -> Trajectory:
    """Align ``est`` to ``gt`` with ``mode`` in {7dof, 6dof, none}."""
    if mode == "none":
        _check_pair(est, gt)
        return est
    if mode not in ("7dof", "6dof"):
        raise ValueError(f"unknown alignment {mode!r}")
    return umeyama_align(est, gt, with_scale=(mode == "7dof")).apply(est)


def ate(est: Trajectory, gt: Trajectory, alignment: Optional[Sim3] = None) -> float:
    """RMSE of position differences after applying ``alignment`` to ``est``."""
    _check_pair(est, gt)
    x = est.positions() if alignment is None else alignment.apply_points(est.positions())
    sq = np.sum((gt.positions() - x) ** 2, axis=1)
    return math.sqrt(math.fsum(sq) / len(sq))


def rpe(est: Trajectory, gt: Trajectory, step: int = 1) -> tuple[float, float]:
    """Mean translation norm and mean angle (degrees) of relative-motion errors."""
    _check_pair(est, gt)
    if step < 1:
        raise ValueError("step must be >= 1")
    tn, ang = [], []
    for i in range(len(est) - step):
        dg = gt.poses[i].inverse() @ gt.poses[i + step]
        de = est.poses[i].inverse() @ est.poses[i + step]
        E = dg.inverse() @ de
        tn.append(float(np.linalg.norm(E.translation)))
        ang.append(math.degrees(geodesic_angle(E.rotation)))
    if not tn:
        return math.nan, math.nan
    return math.fsum(tn) / len(tn), math.fsum(ang) / len(ang)


def path_lengths(traj: Trajectory) -> np.ndarray:
    steps = np.linalg.norm(np.diff(traj.positions(), axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def kitti_segment_errors(est: Trajectory, gt: Trajectory, lengths: Sequence[float] = DEFAULT_SEGMENTS,
                         step: int = 1) -> tuple[float, float]:
    """Segment drift ``(t_err %, r_err deg/100 m)``; ``(nan, nan)`` when no segment fits.

    Segments start at every ``step``-th frame and end at the first frame whose
    ground-truth path length exceeds the start's by the segment length.
    """
    t_errs, r_errs = segment_errors(est, gt, lengths, step)
    if not t_errs:
        return math.nan, math.nan
    return 100.0 * math.fsum(t_errs) / len(t_errs), 100.0 * math.fsum(r_errs) / len(r_errs)


def segment_errors(est: Trajectory, gt: Trajectory, lengths: Sequence[float] = DEFAULT_SEGMENTS,
                   step: int = 1) -> tuple[list, list]:
    """Per-segment translation error per meter and rotation error (degrees) per meter."""
    _check_pair(est, gt)
    if step < 1:
        raise ValueError("step must be >= 1")
    dist = path_lengths(gt)
    Rg, tg = gt.rotations(), gt.positions()
    Re, te = est.rotations(), est.positions()
    firsts = np.arange(0, len(gt), step)
    t_out, r_out = [], []
    for first in firsts:
        for length in lengths:
            last = int(np.searchsorted(dist, dist[first] + length, side="right"))
            if last >= len(gt):
                continue
            dR_g = Rg[first].T @ Rg[last]
            dt_g = Rg[first].T @ (tg[last] - tg[first])
            dR_e = Re[first].T @ Re[last]
            dt_e = Re[first].T @ (te[last] - te[first])
            # E = (delta_est)^-1 (delta_gt)
            E_R = dR_e.T @ dR_g
            E_t = dR_e.T @ (dt_g - dt_e)
            t_out.append(float(np.linalg.norm(E_t)) / length)
            r_out.append(math.degrees(geodesic_angle(E_R)) / length)
    return t_out, r_out


def substitute_component(est_rel: Sequence[RigidMotion], gt_rel: Sequence[RigidMotion], mode: str) -> list:
    """Replace the rotation or translation of every estimated relative motion by ground truth."""
    if len(est_rel) != len(gt_rel):
        raise ValueError("relative motion lists differ in length")
    if mode == "rotation":
        return [RigidMotion(g.rotation, e.translation) for e, g in zip(est_rel, gt_rel)]
    if mode == "translation":
        return [RigidMotion(e.rotation, g.translation) for e, g in zip(est_rel, gt_rel)]
    raise ValueError(f"mode must be 'rotation' or 'translation', got {mode!r}")


def evaluate(est: Trajectory, gt: Trajectory, alignment: str = "7dof",
             lengths: Sequence[float] = DEFAULT_SEGMENTS, segment_step: int = 1,
             rpe_step: int = 1) -> MetricsReport:
    """All five metrics after aligning ``est`` to ``gt``."""
    aligned = align(est, gt, alignment)
    t_err, r_err = kitti_segment_errors(aligned, gt, lengths, segment_step)
    rpe_m, rpe_deg = rpe(aligned, gt, rpe_step)
    return MetricsReport(t_err, r_err, ate(aligned, gt), rpe_m, rpe_deg)


def pooled_segment_errors(pairs: Sequence[tuple], lengths: Sequence[float] = DEFAULT_SEGMENTS,
                          segment_step: int = 1, alignment: str = "7dof") -> tuple[float, float]:
    """t_err / r_err averaged over the segments of several ``(est, gt)`` sequences at once."""
    t_all, r_all = [], []
    for est, gt in pairs:
        t, r = segment_errors(align(est, gt, alignment), gt, lengths, segment_step)
        t_all += t
        r_all += r
    if not t_all:
        return math.nan, math.nan
    return 100.0 * math.fsum(t_all) / len(t_all), 100.0 * math.fsum(r_all) / len(r_all)
