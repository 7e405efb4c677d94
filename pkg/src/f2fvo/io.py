"""Readers and writers for match, pose, depth, intrinsics, image and config files.

Text numbers are written with 17 significant digits so they reload exactly.
Every reader raises :class:`MalformedInput` (with a line number when one
applies) on bad content.
"""

from __future__ import annotations

import math
import struct
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .se3 import CameraIntrinsics, InvalidInput, RigidMotion, is_rotation, nearest_rotation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEPTH_MAGIC = b"DPF1"
ORTHO_TOL = 1e-6


class MalformedInput(InvalidInput):
    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _floats(path, lineno: int, tokens: Sequence[str], count: int) -> list:
    if len(tokens) != count:
        raise MalformedInput(path, f"expected {count} numbers, found {len(tokens)}", lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise MalformedInput(path, "non-numeric value", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise MalformedInput(path, "non-finite value", lineno)
    return vals


# --- matches -----------------------------------------------------------------


@dataclass(frozen=True)
class MatchBlock:
    t: int
    pixels: np.ndarray  # (n, 2) in frame t
    pixels_prime: np.ndarray  # (n, 2) in frame t + 1
    confidence: np.ndarray  # (n,)


def read_matches(path) -> list:
    """Blocks of ``pair <t> <t+1>`` followed by ``u1 v1 u2 v2 conf`` rows."""
    blocks, rows, t = [], [], None

    def close():
        if t is not None:
            a = np.array(rows, dtype=float).reshape(-1, 5)
            blocks.append(MatchBlock(t, a[:, 0:2], a[:, 2:4], a[:, 4]))

    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "pair":
                if len(tok) != 3 or not all(x.lstrip("-").isdigit() for x in tok[1:]):
                    raise MalformedInput(path, "header must be 'pair <t> <t+1>'", lineno)
                t0, t1 = int(tok[1]), int(tok[2])
                if t1 != t0 + 1:
                    raise MalformedInput(path, "pairs must join consecutive frames", lineno)
                if t is not None and t0 != t + 1:
                    raise MalformedInput(path, "pairs must be listed in consecutive order", lineno)
                close()
                t, rows = t0, []
                continue
            if t is None:
                raise MalformedInput(path, "match row before any 'pair' header", lineno)
            row = _floats(path, lineno, tok, 5)
            if not 0.0 <= row[4] <= 1.0:
                raise MalformedInput(path, "confidence outside [0, 1]", lineno)
            rows.append(row)
    close()
    if not blocks:
        raise MalformedInput(path, "no frame pairs found")
    return blocks


def write_matches(path, blocks: Sequence[MatchBlock]) -> None:
    with open(path, "w") as fh:
        for b in blocks:
            fh.write(f"pair {b.t} {b.t + 1}\n")
            for p, q, c in zip(b.pixels, b.pixels_prime, b.confidence):
                fh.write(" ".join(fmt(x) for x in (p[0], p[1], q[0], q[1], c)) + "\n")


# --- poses -------------------------------------------------------------------


def read_poses(path) -> list:
    """KITTI pose file: 12 numbers per line, the upper 3x4 of camera-to-world.

    Rotation blocks that are not orthonormal within 1e-6 are projected onto
    SO(3) with a warning.
    """
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            T = np.array(_floats(path, lineno, tok, 12)).reshape(3, 4)
            R = T[:, :3]
            if not is_rotation(R, ORTHO_TOL):
                if np.linalg.det(R) <= 0:
                    raise MalformedInput(path, "rotation block is not a proper rotation", lineno)
                warnings.warn(f"{path}:{lineno}: re-orthonormalized rotation", stacklevel=2)
                R = nearest_rotation(R)
            poses.append(RigidMotion(R, T[:, 3]))
    if not poses:
        raise MalformedInput(path, "no poses found")
    return poses


def write_poses(path, poses: Sequence[RigidMotion]) -> None:
    with open(path, "w") as fh:
        for p in poses:
            vals = np.hstack([p.rotation, p.translation[:, None]]).reshape(-1)
            fh.write(" ".join(fmt(x) for x in vals) + "\n")


def read_directions(path) -> dict:
    """Sidecar of ``t dx dy dz`` lines; returns ``{t: unit vector}``."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) != 4 or not tok[0].isdigit():
                raise MalformedInput(path, "expected 't dx dy dz'", lineno)
            out[int(tok[0])] = np.array(_floats(path, lineno, tok[1:], 3))
    return out


def write_directions(path, directions: dict) -> None:
    with open(path, "w") as fh:
        for t in sorted(directions):
            fh.write(f"{t} " + " ".join(fmt(x) for x in directions[t]) + "\n")


# --- depth -------------------------------------------------------------------


def write_depth(path, depth) -> None:
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("depth map must be 2-D")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    """DPF1 depth map as float32 ``(H, W)``; non-positive entries are invalid."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != DEPTH_MAGIC:
        raise MalformedInput(path, "missing DPF1 header")
    w, h = struct.unpack("<II", raw[4:12])
    if len(raw) - 12 != 4 * w * h:
        raise MalformedInput(path, f"payload holds {len(raw) - 12} bytes, header implies {4 * w * h}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(np.float32)


# --- intrinsics ----------------------------------------------------------------


def read_intrinsics(path) -> CameraIntrinsics:
    """One line ``fx fy cx cy width height``."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            fx, fy, cx, cy, w, h = _floats(path, lineno, tok, 6)
            if w != int(w) or h != int(h) or w < 1 or h < 1:
                raise MalformedInput(path, "width and height must be positive integers", lineno)
            try:
                return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
            except InvalidInput as e:
                raise MalformedInput(path, str(e), lineno) from None
    raise MalformedInput(path, "no intrinsics found")


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    with open(path, "w") as fh:
        fh.write(" ".join([fmt(K.fx), fmt(K.fy), fmt(K.cx), fmt(K.cy), str(K.width), str(K.height)]) + "\n")


# --- PGM / PPM -------------------------------------------------------------------


def _pnm_tokens(data: bytes, count: int, path):
    """First ``count`` header tokens and the offset just past the single whitespace after them."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise MalformedInput(path, "truncated header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1


def read_pnm(path) -> np.ndarray:
    """8- or 16-bit PGM/PPM (binary or ASCII) as floats in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise MalformedInput(path, "not a PGM/PPM file")
    (_, w, h, maxval), off = _pnm_tokens(data, 4, path)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise MalformedInput(path, "bad header values") from None
    if not (w > 0 and h > 0 and 0 < maxval < 65536):
        raise MalformedInput(path, "bad header values")
    ch = 3 if magic in (b"P3", b"P6") else 1
    n = w * h * ch
    if magic in (b"P5", b"P6"):
        dtype = ">u2" if maxval > 255 else "u1"
        size = np.dtype(dtype).itemsize * n
        if len(data) - off < size:
            raise MalformedInput(path, "truncated pixel data")
        px = np.frombuffer(data, dtype=dtype, count=n, offset=off)
    else:
        try:
            px = np.array([int(t) for t in data[off - 1 :].split()[:n]])
        except ValueError:
            raise MalformedInput(path, "non-integer pixel value") from None
        if px.size != n:
            raise MalformedInput(path, "truncated pixel data")
    if px.max(initial=0) > maxval:
        raise MalformedInput(path, "pixel value exceeds maxval")
    img = px.astype(float).reshape(h, w, ch) / maxval
    return img[..., 0] if ch == 1 else img


def write_pnm(path, img, bits: int = 8) -> None:
    """Binary PGM (2-D) or PPM (3 channels) from floats in [0, 1]."""
    a = np.asarray(img, dtype=float)
    maxval = 255 if bits == 8 else 65535
    q = np.round(np.clip(a, 0.0, 1.0) * maxval)
    magic = b"P5" if a.ndim == 2 else b"P6"
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n{maxval}\n".encode())
        fh.write(q.astype(">u2" if bits == 16 else "u1").tobytes())


# --- TOML config -----------------------------------------------------------------


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise MalformedInput(path, str(e)) from None


def dataclass_from(cls, table: dict, path, section: str):
    """Instantiate ``cls`` from a TOML table, rejecting unknown keys."""
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise MalformedInput(path, f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise MalformedInput(path, f"[{section}]: {e}") from None
