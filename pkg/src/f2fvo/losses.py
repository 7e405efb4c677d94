"""View synthesis and the unsupervised training losses as plain numpy operators.

Images are float arrays in [0, 1] shaped ``(H, W)`` or ``(H, W, C)``.  Depth
maps are ``(H, W)`` arrays where non-positive or non-finite entries are
invalid.  Every map-valued operator returns ``(values, mask)``; failure
states (behind camera, out of bounds, invalid depth) live in the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion, uniform_filter

from .se3 import CameraIntrinsics, RigidMotion

SSIM_WEIGHT = 0.85
L1_WEIGHT = 0.15
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


# coordinates this far past the border (in pixels) are treated as on it, so
# that lift-and-project rounding does not drop edge pixels
EDGE_SLACK = 1e-9


class UndefinedMean(ValueError):
    """Raised when a loss is averaged over an empty mask."""


@dataclass(frozen=True)
class LossReport:
    photometric: float
    smoothness: float
    depth_consistency: float
    valid_pixels: int


def _channels(img) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    return a[..., None] if a.ndim == 2 else a


def depth_valid(depth) -> np.ndarray:
    d = np.asarray(depth, dtype=float)
    return np.isfinite(d) & (d > 0)


def disparity_to_depth(disp, min_depth: float = 0.1, max_depth: float = 100.0) -> np.ndarray:
    """Map disparity in (0, 1] linearly into ``[1/max_depth, 1/min_depth]`` and invert."""
    if not 0 < min_depth < max_depth:
        raise ValueError("need 0 < min_depth < max_depth")
    lo, hi = 1.0 / max_depth, 1.0 / min_depth
    return 1.0 / (lo + np.asarray(disp, dtype=float) * (hi - lo))


def bilinear_sample(src, u, v, valid=None) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``src`` at real-valued pixel coordinates ``(u, v)``.

    A sample is valid when every neighbour that receives non-zero weight lies
    inside the image (and inside ``valid``, if given).  Invalid samples are 0.
    """
    img = _channels(src)
    H, W = img.shape[:2]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    e = EDGE_SLACK
    inside = np.isfinite(u) & np.isfinite(v) & (u >= -e) & (u <= W - 1 + e) & (v >= -e) & (v <= H - 1 + e)
    uu = np.clip(np.where(inside, u, 0.0), 0.0, W - 1)
    vv = np.clip(np.where(inside, v, 0.0), 0.0, H - 1)
    x0 = np.minimum(np.floor(uu).astype(int), W - 1)
    y0 = np.minimum(np.floor(vv).astype(int), H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = uu - x0
    ay = vv - y0
    w00 = (1 - ax) * (1 - ay)
    w01 = ax * (1 - ay)
    w10 = (1 - ax) * ay
    w11 = ax * ay
    out = (
        w00[..., None] * img[y0, x0]
        + w01[..., None] * img[y0, x1]
        + w10[..., None] * img[y1, x0]
        + w11[..., None] * img[y1, x1]
    )
    mask = inside
    if valid is not None:
        ok = np.asarray(valid, dtype=bool)
        for w, yy, xx in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
            mask = mask & ((w == 0) | ok[yy, xx])
    out = np.where(mask[..., None], out, 0.0)
    if np.ndim(src) == 2:
        out = out[..., 0]
    return out, mask


def reproject(depth_tgt, motion: RigidMotion, K: CameraIntrinsics):
    """Pixel coordinates in the source view and transformed depth.

    ``motion`` maps target-camera points into the source camera.  Returns
    ``(u, v, z_src, mask)`` where the mask drops invalid depth and points
    that land at or behind the source camera.
    """
    depth = np.asarray(depth_tgt, dtype=float)
    ok = depth_valid(depth)
    z = np.where(ok, depth, 0.0)
    u, v = K.pixel_grid()
    X = np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=-1)
    Xs = X @ motion.rotation.T + motion.translation
    zs = Xs[..., 2]
    ok &= zs > 0
    safe = np.where(ok, zs, 1.0)
    us = K.fx * Xs[..., 0] / safe + K.cx
    vs = K.fy * Xs[..., 1] / safe + K.cy
    return us, vs, zs, ok


def warp(src, depth_tgt, motion: RigidMotion, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize the target view by sampling ``src`` through target depth and motion."""
    us, vs, _, ok = reproject(depth_tgt, motion, K)
    us = np.where(ok, us, np.nan)
    out, mask = bilinear_sample(src, us, vs)
    return out, mask & ok


def ssim(a, b, window: int = 3, c1: float = SSIM_C1, c2: float = SSIM_C2) -> np.ndarray:
    """Per-pixel SSIM with ``window x window`` box statistics, averaged over channels.

    Borders use mirror padding (the edge pixel is not repeated).
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    x, y = _channels(a), _channels(b)
    if x.shape != y.shape:
        raise ValueError("images must have the same shape")
    size = (window, window, 1)

    def box(z):
        return uniform_filter(z, size=size, mode="mirror")

    mu_x, mu_y = box(x), box(y)
    sxx = box(x * x) - mu_x * mu_x
    syy = box(y * y) - mu_y * mu_y
    sxy = box(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    # rounding can push identical windows a hair above 1
    return np.clip(num / den, -1.0, 1.0).mean(axis=-1)


def photometric_map(target, synthesized, window: int = 3) -> np.ndarray:
    """``0.85 (1 - SSIM) / 2 + 0.15 |target - synthesized|`` per pixel."""
    s = ssim(target, synthesized, window)
    l1 = np.abs(_channels(target) - _channels(synthesized)).mean(axis=-1)
    return SSIM_WEIGHT * (1.0 - s) / 2.0 + L1_WEIGHT * l1


def masked_mean(values, mask) -> float:
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise UndefinedMean("no valid pixels")
    return float(np.asarray(values)[m].mean())


def photometric_loss(target, synthesized, mask=None) -> tuple[np.ndarray, float]:
    """Per-pixel photometric error and its mean over ``mask``."""
    values = photometric_map(target, synthesized)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    return values, masked_mean(values, mask)


def view_synthesis_loss(target, source, depth_tgt, motion: RigidMotion, K: CameraIntrinsics,
                        literal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Photometric error map of ``source`` warped into the target view.

    By default the synthesized view is compared with ``target``.  With
    ``literal=True`` it is compared with ``source`` itself, i.e. the resampled
    frame against the frame it was resampled from.
    """
    synth, mask = warp(source, depth_tgt, motion, K)
    reference = source if literal else target
    return photometric_map(reference, synth), window_mask(mask)


def window_mask(mask, window: int = 3) -> np.ndarray:
    """Keep pixels whose whole SSIM window is valid; the image border counts as valid."""
    m = np.asarray(mask, dtype=bool)
    return binary_erosion(m, structure=np.ones((window, window), dtype=bool), border_value=1)


def min_reprojection(prev: tuple, nxt: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel minimum of two ``(map, mask)`` losses, using whichever is valid."""
    a, ma = np.asarray(prev[0], dtype=float), np.asarray(prev[1], dtype=bool)
    b, mb = np.asarray(nxt[0], dtype=float), np.asarray(nxt[1], dtype=bool)
    out = np.where(ma & mb, np.minimum(a, b), np.where(ma, a, np.where(mb, b, 0.0)))
    return out, ma | mb


def _diffs(z: np.ndarray, order: int):
    dx = z[:, :-1] - z[:, 1:]
    dy = z[:-1, :] - z[1:, :]
    if order == 2:
        dx = dx[:, :-1] - dx[:, 1:]
        dy = dy[:-1, :] - dy[1:, :]
    return dx, dy


def smoothness_loss(disp, img, order: int = 1) -> float:
    """Edge-aware smoothness of the mean-normalized disparity.

    ``order=2`` uses second differences for both disparity and image.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    d = np.asarray(disp, dtype=float)
    im = _channels(img)
    if d.shape != im.shape[:2]:
        raise ValueError("disparity and image shapes differ")
    d = d / d.mean()
    ddx, ddy = _diffs(d, order)
    idx, idy = _diffs(im, order)
    wx = np.exp(-np.abs(idx).mean(axis=-1))
    wy = np.exp(-np.abs(idy).mean(axis=-1))
    return float((np.abs(ddx) * wx).mean() + (np.abs(ddy) * wy).mean())


def depth_consistency_map(depth_a, depth_b, motion_a_to_b: RigidMotion, K: CameraIntrinsics):
    """``|D_ab - D_b| / (D_ab + D_b)`` per pixel of view ``a``.

    ``D_ab`` is the z of each lifted point of ``a`` after moving it into ``b``;
    ``D_b`` is bilinearly sampled where that point projects.
    """
    us, vs, zs, ok = reproject(depth_a, motion_a_to_b, K)
    us = np.where(ok, us, np.nan)
    db, mask = bilinear_sample(np.asarray(depth_b, dtype=float), us, vs, valid=depth_valid(depth_b))
    mask &= ok
    den = np.where(mask, zs + db, 1.0)
    return np.where(mask, np.abs(zs - db) / den, 0.0), mask


def depth_consistency_loss(depth_a, depth_b, motion_a_to_b: RigidMotion, K: CameraIntrinsics) -> float:
    values, mask = depth_consistency_map(depth_a, depth_b, motion_a_to_b, K)
    return masked_mean(values, mask)


def evaluate_losses(img_a, img_b, depth_a, depth_b, motion_a_to_b: RigidMotion, K: CameraIntrinsics,
                    disp_a=None) -> LossReport:
    """All three losses for one frame pair, with ``a`` as the target view.

    ``disp_a`` defaults to the inverse of ``depth_a`` (smoothness is
    invariant to its scale).
    """
    values, mask = view_synthesis_loss(img_a, img_b, depth_a, motion_a_to_b, K)
    lp = masked_mean(values, mask)
    if disp_a is None:
        valid = depth_valid(depth_a)
        disp_a = np.where(valid, 1.0 / np.where(valid, depth_a, 1.0), 0.0)
    ls = smoothness_loss(disp_a, img_a)
    ldc = depth_consistency_loss(depth_a, depth_b, motion_a_to_b, K)
    return LossReport(lp, ls, ldc, int(mask.sum()))
