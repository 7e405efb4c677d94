"""Synthetic ground-truth problems used to verify the rest of the package.

Random draws come from numpy's Philox counter-based generator keyed by
``(seed, stream)``, so a given seed reproduces the same scene bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .se3 import CameraIntrinsics, RigidMotion, bearing, so3_exp, so3_exp_batch


class GenerationError(RuntimeError):
    pass


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


DEFAULT_INTRINSICS = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 200
    depth_range: tuple[float, float] = (4.0, 30.0)
    rotation_range: tuple[float, float] = (0.0, math.radians(30.0))
    translation_range: tuple[float, float] = (0.5, 2.0)
    pixel_noise: float = 0.0
    outlier_fraction: float = 0.0
    pure_rotation: bool = False
    seed: int = 0
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    render_depth: bool = True

    def __post_init__(self):
        for lo, hi in (self.depth_range, self.rotation_range, self.translation_range):
            if not (0 <= lo <= hi):
                raise ValueError("ranges must be non-negative and ordered")
        if self.depth_range[0] <= 0:
            raise ValueError("minimum depth must be positive")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier fraction must lie in [0, 1)")
        if self.pixel_noise < 0 or self.n_points < 1:
            raise ValueError("invalid noise or point count")


@dataclass(frozen=True)
class SceneSample:
    """Two-view ground truth.

    ``motion`` maps camera-2 coordinates into camera 1 (the pose of camera 2
    in camera 1), so ``f_i``, ``R f'_i`` and ``t`` are coplanar.
    """

    points: np.ndarray  # (n, 3) in camera-1 frame
    motion: RigidMotion
    pixels: np.ndarray  # (n, 2)
    pixels_prime: np.ndarray  # (n, 2)
    f: np.ndarray
    f_prime: np.ndarray
    f_noisy: np.ndarray
    f_prime_noisy: np.ndarray
    inlier: np.ndarray
    depth: Optional[np.ndarray] = field(default=None, repr=False)
    depth_prime: Optional[np.ndarray] = field(default=None, repr=False)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS

    @property
    def poses(self) -> tuple[RigidMotion, RigidMotion]:
        return RigidMotion.identity(), self.motion

    @property
    def rotation(self) -> np.ndarray:
        return self.motion.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.motion.translation

    def exact_pairs(self):
        from .f2f import BearingPairSet

        return BearingPairSet(self.f, self.f_prime)

    def noisy_pairs(self):
        from .f2f import BearingPairSet

        return BearingPairSet(self.f_noisy, self.f_prime_noisy)


def random_rotation(rng: np.random.Generator, angle_range: tuple[float, float]) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(*angle_range))


def _in_image(px: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    return (px[:, 0] >= 0) & (px[:, 0] <= K.width - 1) & (px[:, 1] >= 0) & (px[:, 1] <= K.height - 1)


def _project(X: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    return np.stack([K.fx * X[:, 0] / X[:, 2] + K.cx, K.fy * X[:, 1] / X[:, 2] + K.cy], axis=1)


def splat_depth(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Z-buffered nearest-pixel depth render; 0 marks pixels without a point."""
    depth = np.zeros((K.height, K.width))
    z = points[:, 2]
    ok = z > 0
    px = np.rint(_project(points[ok], K)).astype(int)
    inside = (px[:, 0] >= 0) & (px[:, 0] < K.width) & (px[:, 1] >= 0) & (px[:, 1] < K.height)
    px, zz = px[inside], z[ok][inside]
    # draw far-to-near so the nearest point wins each pixel
    order = np.argsort(-zz, kind="stable")
    depth[px[order, 1], px[order, 0]] = zz[order]
    return depth


def gen_scene(cfg: SceneConfig) -> SceneSample:
    rng = rng_for(cfg.seed)
    R = random_rotation(rng, cfg.rotation_range)
    if cfg.pure_rotation:
        t = np.zeros(3)
    else:
        d = rng.normal(size=3)
        t = d / np.linalg.norm(d) * rng.uniform(*cfg.translation_range)
    return scene_with_motion(cfg, RigidMotion(R, t), rng)


def scene_with_motion(cfg: SceneConfig, motion: RigidMotion, rng: np.random.Generator) -> SceneSample:
    """Sample points visible in both cameras for a given relative motion."""
    K = cfg.intrinsics
    inv = motion.inverse()
    n = cfg.n_points
    kept: list[np.ndarray] = []
    count, attempts = 0, 0
    batch = max(4 * n, 256)
    while count < n:
        attempts += 1
        if attempts > 1000:
            raise GenerationError("camera frusta do not overlap enough for the requested points")
        uv = np.column_stack([rng.uniform(0, K.width - 1, batch), rng.uniform(0, K.height - 1, batch)])
        z = rng.uniform(*cfg.depth_range, batch)
        X1 = np.column_stack([(uv[:, 0] - K.cx) * z / K.fx, (uv[:, 1] - K.cy) * z / K.fy, z])
        X2 = inv.apply(X1)
        ok = X2[:, 2] > 0.1 * cfg.depth_range[0]
        ok[ok] = _in_image(_project(X2[ok], K), K)
        kept.append(X1[ok])
        count += int(ok.sum())
    X1 = np.concatenate(kept)[:n]
    X2 = inv.apply(X1)
    p1, p2 = _project(X1, K), _project(X2, K)
    f = X1 / np.linalg.norm(X1, axis=1, keepdims=True)
    fp = X2 / np.linalg.norm(X2, axis=1, keepdims=True)
    fn, fpn, inlier = corrupt((f, fp), cfg.pixel_noise, cfg.outlier_fraction, K, cfg.seed)
    depth = splat_depth(X1, K) if cfg.render_depth else None
    depth_p = splat_depth(X2, K) if cfg.render_depth else None
    return SceneSample(X1, motion, p1, p2, f, fp, fn, fpn, inlier, depth, depth_p, K)


def corrupt(pairs, sigma: float, outlier_fraction: float, K: CameraIntrinsics, seed: int):
    """Pixel noise on both views plus outlier replacement of the second bearing.

    Returns ``(f, f_prime, inlier_labels)``.
    """
    if isinstance(pairs, tuple):
        f, fp = (np.asarray(a, dtype=float) for a in pairs)
    else:
        f, fp = pairs.f, pairs.f_prime
    n = len(f)
    rng = rng_for(seed, 1)
    f_out, fp_out = f.copy(), fp.copy()
    if sigma > 0:
        for arr in (f_out, fp_out):
            px = _project(arr, K) + rng.normal(scale=sigma, size=(n, 2))
            arr[:] = bearing(px, K)
    inlier = np.ones(n, dtype=bool)
    n_out = int(round(outlier_fraction * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        px = np.column_stack([rng.uniform(0, K.width - 1, n_out), rng.uniform(0, K.height - 1, n_out)])
        fp_out[idx] = bearing(px, K)
        inlier[idx] = False
    return f_out, fp_out, inlier


def brute_force_rotation(pairs, resolution: float = 1e-3, max_angle: float = math.pi / 2,
                         coarse_step: float = 0.1, levels: int = 3) -> np.ndarray:
    """Coarse-to-fine grid search for the rotation minimizing ``lambda_min``.

    The coarse grid covers the axis-angle ball of radius ``max_angle``;
    each of ``levels`` refinements shrinks the step by a constant factor
    until it equals ``resolution``.  The search ball excludes the second
    exact minimum obtained by rotating the solution pi about the baseline.
    Eigenvalues come from LAPACK, so this path shares nothing with the
    Levenberg-Marquardt solver.
    """
    if resolution < 1e-3:
        raise ValueError("resolution below 1e-3 is too costly for a grid search")
    if isinstance(pairs, tuple):
        f, fp = (np.asarray(a, dtype=float) for a in pairs)
    else:
        f, fp = pairs.f, pairs.f_prime

    def cost(omegas: np.ndarray) -> np.ndarray:
        out = np.empty(len(omegas))
        for s in range(0, len(omegas), 4096):
            Rs = so3_exp_batch(omegas[s : s + 4096])
            N = np.cross(f[None], np.einsum("mij,nj->mni", Rs, fp))
            M = np.einsum("mni,mnj->mij", N, N)
            out[s : s + 4096] = np.linalg.eigvalsh(M)[:, 0]
        return out

    ticks = np.arange(-max_angle, max_angle + 0.5 * coarse_step, coarse_step)
    grid = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid[np.linalg.norm(grid, axis=1) <= max_angle]
    best = grid[np.argmin(cost(grid))]
    step = coarse_step
    factor = (coarse_step / resolution) ** (1.0 / levels)
    reach = int(math.ceil(factor))
    offsets = np.arange(-reach, reach + 1)
    cube = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 3)
    for _ in range(levels):
        step /= factor
        cand = best + cube * step
        best = cand[np.argmin(cost(cand))]
    return so3_exp(best)


# --- analytic planar scenes ------------------------------------------------


@dataclass(frozen=True)
class TexturedPlane:
    """Plane ``n . X = d`` in world coordinates with a smooth intensity texture.

    The texture is a sum of low-frequency sinusoids of the in-plane
    coordinates, so bilinear resampling of a render is accurate to ~1e-4.
    """

    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 10.0
    wavelength: float = 3.0

    def intensity(self, X: np.ndarray) -> np.ndarray:
        k = 2.0 * math.pi / self.wavelength
        x, y = X[..., 0], X[..., 1]
        return 0.5 + 0.2 * np.sin(k * x + 0.3) * np.cos(0.7 * k * y) + 0.15 * np.sin(0.45 * k * (x + y))

    def render(self, pose: RigidMotion, K: CameraIntrinsics, channels: int = 1):
        """Image and exact depth for a camera with camera-to-world ``pose``.

        Pixels whose ray misses the plane get depth 0 and intensity 0.
        """
        u, v = K.pixel_grid()
        rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        # world ray: C + z * R ray ; solve n.(C + z R ray) = d
        Rr = rays @ pose.rotation.T
        denom = Rr @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self.offset - n @ pose.translation) / denom
        valid = np.isfinite(z) & (z > 0)
        z = np.where(valid, z, 0.0)
        Xw = pose.translation + z[..., None] * Rr
        img = np.where(valid, self.intensity(Xw), 0.0)
        if channels == 3:
            img = np.stack([img, 0.9 * img + 0.05, 1.0 - img], axis=-1) * valid[..., None]
        return img, z


# --- multi-frame sequences --------------------------------------------------


@dataclass(frozen=True)
class SequenceConfig:
    frames: int = 20
    scene: SceneConfig = SceneConfig()
    forward_motion: bool = True
    pred_rotation_noise_deg: float = 1.0
    pred_translation_noise: float = 0.001
    seed: int = 0


@dataclass(frozen=True)
class SequenceSample:
    gt_poses: list
    pred_poses: list
    matches: list  # per pair: (t, pixels, pixels_prime, confidence)
    depths: list
    intrinsics: CameraIntrinsics


def gen_sequence(cfg: SequenceConfig) -> SequenceSample:
    """Chain of independent two-view scenes with noisy "network" predictions.

    With ``forward_motion`` the translation of every step points mostly along
    +z, like a car-mounted camera.  Predicted relative motions carry rotation
    noise of ``pred_rotation_noise_deg`` (geodesic) and relative translation
    noise ``pred_translation_noise``.
    """
    if cfg.frames < 2:
        raise ValueError("a sequence needs at least two frames")
    gt = [RigidMotion.identity()]
    pred = [RigidMotion.identity()]
    matches, depths = [], []
    noise_rng = rng_for(cfg.seed, 2)
    for t in range(cfg.frames - 1):
        sub = SceneConfig(**{**_fields(cfg.scene), "seed": _mix(cfg.seed, t)})
        rng = rng_for(sub.seed)
        R = random_rotation(rng, sub.rotation_range)
        if sub.pure_rotation:
            tr = np.zeros(3)
        else:
            d = rng.normal(size=3)
            if cfg.forward_motion:
                d = np.array([0.1 * d[0], 0.1 * d[1], 1.0])
            tr = d / np.linalg.norm(d) * rng.uniform(*sub.translation_range)
        sample = scene_with_motion(sub, RigidMotion(R, tr), rng)
        motion = sample.motion
        gt.append(gt[-1] @ motion)
        axis = noise_rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R_noise = so3_exp(axis * math.radians(cfg.pred_rotation_noise_deg))
        t_noise = 1.0 + noise_rng.normal(scale=cfg.pred_translation_noise)
        noisy = RigidMotion(R_noise @ motion.rotation, motion.translation * t_noise)
        pred.append(pred[-1] @ noisy)
        conf = np.where(
            sample.inlier,
            noise_rng.uniform(0.9, 1.0, len(sample.inlier)),
            noise_rng.uniform(0.0, 1.0, len(sample.inlier)),
        )
        K = sub.intrinsics
        px1 = _project(sample.f_noisy / sample.f_noisy[:, 2:3], K)
        px2 = _project(sample.f_prime_noisy / sample.f_prime_noisy[:, 2:3], K)
        matches.append((t, px1, px2, conf))
        depths.append(sample.depth)
        if t == cfg.frames - 2:
            depths.append(sample.depth_prime)
    return SequenceSample(gt, pred, matches, depths, cfg.scene.intrinsics)


def _fields(cfg: SceneConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _mix(seed: int, t: int) -> int:
    return (seed * 1_000_003 + t + 1) & 0x7FFFFFFFFFFFFFFF


def gen_noisy_odometry(seed: int, frames: int = 100, step_length: float = 1.0, turn_deg: float = 2.0,
                       rotation_noise_deg: float = 1.0, translation_noise: float = 1e-3):
    """Ground-truth and noisy relative motions of a gently turning forward drive.

    Every estimated relative rotation is off by exactly ``rotation_noise_deg``
    about a random axis; every translation gets isotropic Gaussian noise with
    standard deviation ``translation_noise`` times its length per axis.
    """
    rng = rng_for(seed, 3)
    gt, est = [], []
    for _ in range(frames - 1):
        yaw = math.radians(turn_deg) * rng.uniform(-1.0, 1.0)
        pitch = math.radians(0.1 * turn_deg) * rng.uniform(-1.0, 1.0)
        R = so3_exp([pitch, yaw, 0.0])
        t = step_length * np.array([0.02 * rng.normal(), 0.01 * rng.normal(), 1.0])
        gt.append(RigidMotion(R, t))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R_noise = so3_exp(axis * math.radians(rotation_noise_deg))
        t_noise = rng.normal(scale=translation_noise, size=3)
        est.append(RigidMotion(R_noise @ R, t + np.linalg.norm(t) * t_noise))
    return gt, est
