"""Rotation and rigid-motion algebra plus the pinhole camera model.

Rotations are stored as 3x3 numpy arrays; axis-angle vectors ``omega = theta * u``
with ``theta`` in [0, pi] are the canonical parameterization.  Camera frame
convention: x right, y down, z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Below this angle exp/log switch to Taylor branches.
SMALL_ANGLE = 1e-8
# Within this distance of pi the log map reads the axis from the symmetric part.
NEAR_PI = 1e-3


class InvalidInput(ValueError):
    """Raised when an argument violates an operation's precondition."""


class BehindCamera(InvalidInput):
    """Raised when projecting a point with non-positive depth."""


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]x`` so that ``skew(a) @ b == cross(a, b)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula: axis-angle vector to rotation matrix."""
    w = np.asarray(omega, dtype=float).reshape(3)
    theta2 = float(w @ w)
    theta = math.sqrt(theta2)
    W = skew(w)
    if theta < SMALL_ANGLE:
        # second-order series: I + W + W^2/2
        return np.eye(3) + W + 0.5 * (W @ W)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * W + b * (W @ W)


def so3_exp_batch(omegas: np.ndarray) -> np.ndarray:
    """Vectorized :func:`so3_exp` over an ``(m, 3)`` array; returns ``(m, 3, 3)``."""
    w = np.asarray(omegas, dtype=float).reshape(-1, 3)
    theta2 = np.einsum("ij,ij->i", w, w)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    W = np.zeros((len(w), 3, 3))
    W[:, 0, 1], W[:, 0, 2] = -w[:, 2], w[:, 1]
    W[:, 1, 0], W[:, 1, 2] = w[:, 2], -w[:, 0]
    W[:, 2, 0], W[:, 2, 1] = -w[:, 1], w[:, 0]
    return np.eye(3) + a[:, None, None] * W + b[:, None, None] * (W @ W)


def so3_log(R) -> np.ndarray:
    """Canonical axis-angle vector of a rotation, with angle in [0, pi].

    Three branches: a Taylor expansion for tiny angles, the standard
    ``theta / (2 sin theta) * vee(R - R^T)`` in the bulk, and near pi the axis
    is recovered from the diagonal of the symmetric part ``(R + R^T) / 2``,
    where ``sin theta`` carries no usable information.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = 0.5 * (np.trace(R) - 1.0)
    cos_theta = min(1.0, max(-1.0, cos_theta))
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = float(np.linalg.norm(vee))
    # atan2 keeps full relative accuracy at both ends, unlike acos
    theta = math.atan2(sin_theta, cos_theta)
    if theta < SMALL_ANGLE:
        # vee = sin(theta) u ~ theta u (1 - theta^2/6)
        return vee * (1.0 + theta * theta / 6.0)
    if math.pi - theta > NEAR_PI:
        return vee * (theta / sin_theta)
    # R + R^T = 2 cos(t) I + 2 (1 - cos(t)) u u^T
    S = 0.5 * (R + R.T)
    uu = (S - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(uu)))
    u = uu[:, k] / math.sqrt(max(uu[k, k], 0.0))
    u /= np.linalg.norm(u)
    # pick the sign that agrees with the (small) antisymmetric part
    if float(u @ vee) < 0.0:
        u = -u
    # refine theta with the antisymmetric part, which is accurate near pi
    s = float(u @ vee)
    theta = math.atan2(s, cos_theta)
    return u * theta


def geodesic_angle(R1, R2=None) -> float:
    """Rotation angle of ``R1^T R2`` (or of ``R1`` alone), in radians."""
    R = np.asarray(R1, dtype=float) if R2 is None else np.asarray(R1).T @ np.asarray(R2)
    # atan2 form stays accurate for tiny and near-pi angles
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return math.atan2(float(np.linalg.norm(vee)), 0.5 * (np.trace(R) - 1.0))


def nearest_rotation(A) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(A, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.abs(R.T @ R - np.eye(3)).max() <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class RigidMotion:
    """Rigid transform ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "RigidMotion":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidMotion":
        Rt = self.rotation.T
        return RigidMotion(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidMotion") -> "RigidMotion":
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Transform ``(3,)`` or ``(n, 3)`` points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


def compose(a: RigidMotion, b: RigidMotion) -> RigidMotion:
    """``a o b``: apply ``b`` first, then ``a``."""
    return RigidMotion(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInput("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """``(u, v)`` arrays of shape ``(height, width)`` at integer pixel positions."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(float)
        return u, v


def lift(pixel, depth, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixel(s) ``(..., 2)`` with z-depth(s) into camera coordinates."""
    p = np.asarray(pixel, dtype=float)
    z = np.asarray(depth, dtype=float)
    if np.any(~(z > 0)):
        raise InvalidInput("depth must be positive")
    x = (p[..., 0] - K.cx) * z / K.fx
    y = (p[..., 1] - K.cy) * z / K.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def project(points, K: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of point(s) ``(..., 3)`` to pixels ``(..., 2)``."""
    X = np.asarray(points, dtype=float)
    z = X[..., 2]
    if np.any(~(z > 0)):
        raise BehindCamera("point at or behind the camera plane")
    return np.stack([K.fx * X[..., 0] / z + K.cx, K.fy * X[..., 1] / z + K.cy], axis=-1)


def bearing(pixel, K: CameraIntrinsics) -> np.ndarray:
    """Unit bearing vector(s) ``K^-1 (u, v, 1)`` normalized."""
    p = np.asarray(pixel, dtype=float)
    ray = np.stack(
        [(p[..., 0] - K.cx) / K.fx, (p[..., 1] - K.cy) / K.fy, np.ones(p.shape[:-1])], axis=-1
    )
    return ray / np.linalg.norm(ray, axis=-1, keepdims=True)
