"""Command-line entry point: ``f2fvo <command> ...``.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import evaluation as ev
from . import io
from .f2f import (
    BearingPairSet,
    ConstantMotion,
    F2FConfig,
    Identity,
    InsufficientMatches,
    NumericalFailure,
    Prior,
    epipolar_normals,
    solve_f2f,
    translation_reliability,
)
from .losses import UndefinedMean, evaluate_losses, ssim
from .scale import ScaleAlignConfig, align_scale
from .se3 import CameraIntrinsics, InvalidInput, RigidMotion, bearing
from .synth import SceneConfig, SequenceConfig, gen_sequence

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
STATS_COLUMNS = ("pair", "lambda_min", "iterations", "converged", "n_matches", "n_filtered", "reliability")


@dataclass(frozen=True)
class LossWeights:
    smoothness: float = 1e-3
    depth_consistency: float = 5e-1
    rotation: float = 1.0

    def __post_init__(self):
        if min(self.smoothness, self.depth_consistency, self.rotation) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    f2f: F2FConfig = field(default_factory=F2FConfig)
    scale: ScaleAlignConfig = field(default_factory=ScaleAlignConfig)
    weights: LossWeights = field(default_factory=LossWeights)


def load_run_config(path: Optional[str]) -> RunConfig:
    """``[f2f]``, ``[scale]`` and ``[weights]`` tables; every key is optional."""
    if path is None:
        return RunConfig()
    data = io.read_toml(path)
    unknown = set(data) - {"f2f", "scale", "weights"}
    if unknown:
        raise io.MalformedInput(path, f"unknown table(s): {', '.join(sorted(unknown))}")
    return RunConfig(
        io.dataclass_from(F2FConfig, data.get("f2f", {}), path, "f2f"),
        io.dataclass_from(ScaleAlignConfig, data.get("scale", {}), path, "scale"),
        io.dataclass_from(LossWeights, data.get("weights", {}), path, "weights"),
    )


# --- f2f-solve ---------------------------------------------------------------------


def _solve_pair(block: io.MatchBlock, K, init, cfg: F2FConfig):
    """Returns ``(rotation, direction, stats row, numerical_failure)`` for one pair."""
    pairs = BearingPairSet(bearing(block.pixels, K), bearing(block.pixels_prime, K), block.confidence)
    n = len(pairs)
    n_filtered = len(pairs.filtered(cfg.confidence_threshold))
    try:
        sol = solve_f2f(pairs, init, cfg)
    except (InsufficientMatches, NumericalFailure) as e:
        status = "skipped" if isinstance(e, InsufficientMatches) else "failed"
        row = [block.t, "nan", 0, status, n, n_filtered, "nan"]
        return np.eye(3), np.zeros(3), row, isinstance(e, NumericalFailure)
    N = epipolar_normals(pairs.filtered(cfg.confidence_threshold), sol.rotation)
    rel = translation_reliability(sol, N)
    row = [block.t, io.fmt(sol.lambda_min), sol.iterations, str(sol.converged).lower(), n, n_filtered, io.fmt(rel)]
    return sol.rotation, sol.translation_direction, row, False


def _solve_job(args):
    return _solve_pair(*args)


def cmd_f2f_solve(a) -> int:
    K = io.read_intrinsics(a.intrinsics)
    blocks = io.read_matches(a.matches)
    cfg = load_run_config(a.config).f2f
    if a.confidence_threshold is not None:
        cfg = F2FConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                           "confidence_threshold": a.confidence_threshold})
    mode = a.init
    prior = None
    if mode.startswith("prior:"):
        prior_path = mode[len("prior:"):]
        if not prior_path:
            raise io.MalformedInput("--init", "prior: needs a pose file")
        prior = ev.decompose(ev.Trajectory(io.read_poses(prior_path)))
        if blocks[-1].t >= len(prior):
            raise io.MalformedInput(prior_path, f"prior covers {len(prior)} pairs, matches need {blocks[-1].t + 1}")
    elif mode not in ("identity", "constant"):
        raise io.MalformedInput("--init", f"unknown init mode {mode!r}")

    results = []
    if mode == "constant":
        prev = None
        for b in blocks:
            init = Identity() if prev is None else ConstantMotion(prev)
            res = _solve_pair(b, K, init, cfg)
            results.append(res)
            prev = res[0]
    else:
        jobs = [(b, K, Prior(prior[b.t].rotation) if prior else Identity(), cfg) for b in blocks]
        if a.jobs > 1:
            with ProcessPoolExecutor(max_workers=a.jobs) as pool:
                results = list(pool.map(_solve_job, jobs))
        else:
            results = [_solve_pair(*j) for j in jobs]

    out = Path(a.out)
    io.write_poses(out, [RigidMotion(R, np.zeros(3)) for R, _, _, _ in results])
    dirs_path = Path(a.directions) if a.directions else out.with_name(out.name + ".dirs")
    io.write_directions(dirs_path, {b.t: r[1] for b, r in zip(blocks, results)})
    stats_path = Path(a.stats) if a.stats else out.with_name(out.name + ".stats.csv")
    with open(stats_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for r in results:
            w.writerow(r[2])
    failed = [r[2][0] for r in results if r[3]]
    if failed:
        print(f"numerical failure on pair(s) {failed}; identity emitted", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --- adjust / scale ------------------------------------------------------------------


def _f2f_rotations(path, kind: str) -> list:
    poses = io.read_poses(path)
    if kind == "absolute":
        return [m.rotation for m in ev.decompose(ev.Trajectory(poses))]
    return [p.rotation for p in poses]


def _pred_relatives(path):
    pred = io.read_poses(path)
    return pred[0], ev.decompose(ev.Trajectory(pred))


def cmd_adjust(a) -> int:
    first, pred_rel = _pred_relatives(a.pred)
    rots = _f2f_rotations(a.f2f, a.f2f_kind)
    if len(rots) != len(pred_rel):
        raise io.MalformedInput(a.f2f, f"{len(rots)} rotations for {len(pred_rel)} predicted motions")
    adjusted = [RigidMotion(R, p.translation) for R, p in zip(rots, pred_rel)]
    io.write_poses(a.out, ev.accumulate(adjusted, first).poses)
    return EXIT_OK


def _depth_at(depth: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Nearest-pixel depth lookup; outside the map gives 0 (invalid)."""
    h, w = depth.shape
    x = np.rint(pixels[:, 0]).astype(int)
    y = np.rint(pixels[:, 1]).astype(int)
    inside = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    out = np.zeros(len(pixels))
    out[inside] = depth[y[inside], x[inside]]
    return out


def cmd_scale(a) -> int:
    K = io.read_intrinsics(a.intrinsics)
    cfg = load_run_config(a.config)
    first, pred_rel = _pred_relatives(a.pred)
    rots = _f2f_rotations(a.f2f, "relative")
    dirs = io.read_directions(a.directions)
    blocks = {b.t: b for b in io.read_matches(a.matches)}
    if len(rots) != len(pred_rel):
        raise io.MalformedInput(a.f2f, f"{len(rots)} rotations for {len(pred_rel)} predicted motions")
    depth_dir = Path(a.depths)
    out_rel, rows = [], []
    for t, (R, p) in enumerate(zip(rots, pred_rel)):
        trans, row = p.translation, [t, "nan", "nan", "nan", "false"]
        b, d = blocks.get(t), dirs.get(t)
        dpath = depth_dir / f"depth_{t:06d}.dpf"
        if b is not None and d is not None and np.any(d) and np.any(p.translation) and dpath.exists():
            keep = b.confidence >= cfg.f2f.confidence_threshold
            f, fp = bearing(b.pixels[keep], K), bearing(b.pixels_prime[keep], K)
            z = _depth_at(io.read_depth(dpath), b.pixels[keep])
            res = align_scale(f, fp, z, R, d, p.translation, cfg.scale)
            row = [t, io.fmt(res.scale), io.fmt(res.delta), io.fmt(res.cheirality), str(res.accepted).lower()]
            if res.accepted:
                trans = res.translation
        out_rel.append(RigidMotion(R, trans))
        rows.append(row)
    io.write_poses(a.out, ev.accumulate(out_rel, first).poses)
    stats = Path(a.stats) if a.stats else Path(a.out).with_name(Path(a.out).name + ".scale.csv")
    with open(stats, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("pair", "scale", "delta", "cheirality", "accepted"))
        w.writerows(rows)
    return EXIT_OK


# --- eval -------------------------------------------------------------------------------


def _metric(x: float) -> str:
    return "nan" if math.isnan(x) else io.fmt(x)


def cmd_eval(a) -> int:
    if len(a.est) != len(a.gt):
        raise io.MalformedInput("--est/--gt", "need one ground-truth file per estimate")
    lengths = tuple(a.segments)
    seqs = []
    for e_path, g_path in zip(a.est, a.gt):
        est, gt = ev.Trajectory(io.read_poses(e_path)), ev.Trajectory(io.read_poses(g_path))
        if len(est) != len(gt):
            raise io.MalformedInput(e_path, f"{len(est)} poses but ground truth has {len(gt)}")
        if len(est) < 3 and a.align != "none":
            raise io.MalformedInput(e_path, "alignment needs at least 3 poses")
        seqs.append((Path(e_path).stem, est, gt))
    header = ("sequence", "t_err", "r_err", "ATE", "RPE_m", "RPE_deg")
    rows, aligned_rows, reports = [], [], []
    for name, est, gt in seqs:
        aligned = ev.align(est, gt, a.align)
        rep = ev.evaluate(aligned, gt, "none", lengths, a.segment_step, a.rpe_step)
        reports.append(rep)
        rows.append([name] + [_metric(v) for v in rep.as_dict().values()])
        for i, (p, g) in zip(gt.indices, zip(aligned.positions(), gt.positions())):
            aligned_rows.append([name, i] + [io.fmt(v) for v in (*p, *g)])
    if len(seqs) > 1:
        t_p, r_p = ev.pooled_segment_errors([(e, g) for _, e, g in seqs], lengths, a.segment_step, a.align)

        def mean(k):
            vals = [getattr(r, k) for r in reports]
            return math.fsum(vals) / len(vals)

        rows.append(["pooled", _metric(t_p), _metric(r_p), _metric(mean("ate")), _metric(mean("rpe_m")),
                     _metric(mean("rpe_deg"))])
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    aligned_path = Path(a.aligned_out) if a.aligned_out else Path(a.out).with_name(Path(a.out).stem + "_aligned.csv")
    with open(aligned_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sequence", "frame", "x", "y", "z", "gt_x", "gt_y", "gt_z"))
        w.writerows(aligned_rows)
    return EXIT_OK


# --- simulate -----------------------------------------------------------------------------


def load_sequence_config(path) -> SequenceConfig:
    """``[sequence]``, ``[scene]`` and ``[intrinsics]`` tables."""
    data = io.read_toml(path)
    unknown = set(data) - {"sequence", "scene", "intrinsics"}
    if unknown:
        raise io.MalformedInput(path, f"unknown table(s): {', '.join(sorted(unknown))}")
    scene_tab = dict(data.get("scene", {}))
    if "intrinsics" in data:
        scene_tab["intrinsics"] = io.dataclass_from(CameraIntrinsics, data["intrinsics"], path, "intrinsics")
    scene = io.dataclass_from(SceneConfig, scene_tab, path, "scene")
    seq_tab = dict(data.get("sequence", {}))
    if "scene" in seq_tab:
        raise io.MalformedInput(path, "[sequence] cannot contain 'scene'")
    seq_tab["scene"] = scene
    return io.dataclass_from(SequenceConfig, seq_tab, path, "sequence")


def cmd_simulate(a) -> int:
    cfg = load_sequence_config(a.config)
    sample = gen_sequence(cfg)
    out = Path(a.out)
    (out / "depths").mkdir(parents=True, exist_ok=True)
    blocks = [io.MatchBlock(t, p1, p2, c) for t, p1, p2, c in sample.matches]
    io.write_matches(out / "matches.txt", blocks)
    io.write_poses(out / "gt_poses.txt", sample.gt_poses)
    io.write_poses(out / "pred_poses.txt", sample.pred_poses)
    io.write_intrinsics(out / "intrinsics.txt", sample.intrinsics)
    for t, d in enumerate(sample.depths):
        io.write_depth(out / "depths" / f"depth_{t:06d}.dpf", d)
    return EXIT_OK


# --- losses -------------------------------------------------------------------------------


def cmd_losses(a) -> int:
    K = io.read_intrinsics(a.intrinsics)
    img_a, img_b = io.read_pnm(a.image_a), io.read_pnm(a.image_b)
    d_a, d_b = io.read_depth(a.depth_a).astype(float), io.read_depth(a.depth_b).astype(float)
    shape = (K.height, K.width)
    for name, arr in (("image-a", img_a), ("image-b", img_b), ("depth-a", d_a), ("depth-b", d_b)):
        if arr.shape[:2] != shape:
            raise io.MalformedInput(name, f"size {arr.shape[1]}x{arr.shape[0]} differs from intrinsics")
    if img_a.shape != img_b.shape:
        raise io.MalformedInput("image-b", "channel count differs from image-a")
    motion = RigidMotion.identity()
    if a.motion:
        poses = io.read_poses(a.motion)
        if len(poses) != 1:
            raise io.MalformedInput(a.motion, "expected exactly one motion line")
        motion = poses[0]
    w = load_run_config(a.config).weights
    try:
        rep = evaluate_losses(img_a, img_b, d_a, d_b, motion, K)
    except UndefinedMean as e:
        raise io.MalformedInput(a.depth_a, f"no valid pixels ({e})") from None
    ssim_mean = float(ssim(img_a, img_b).mean())
    rows = [
        ("photometric", rep.photometric, 1.0),
        ("smoothness", rep.smoothness, w.smoothness),
        ("depth_consistency", rep.depth_consistency, w.depth_consistency),
    ]
    total = math.fsum(v * wt for _, v, wt in rows)
    with open(a.out, "w", newline="") as fh:
        cw = csv.writer(fh, lineterminator="\n")
        cw.writerow(("loss", "value", "weight", "weighted"))
        for name, v, wt in rows:
            cw.writerow((name, io.fmt(v), io.fmt(wt), io.fmt(v * wt)))
        cw.writerow(("ssim_mean", io.fmt(ssim_mean), "", ""))
        cw.writerow(("total", "", "", io.fmt(total)))
        cw.writerow(("valid_pixels", rep.valid_pixels, "", ""))
    for name, v, wt in rows:
        print(f"{name:18s} {v:.6g} (x{wt:g} = {v * wt:.6g})")
    print(f"{'ssim_mean':18s} {ssim_mean:.6g}")
    print(f"{'total':18s} {total:.6g}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="f2fvo", description="Frame-to-frame rotation refinement for monocular VO.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("f2f-solve", help="solve relative rotations from matches")
    s.add_argument("--matches", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--init", default="identity", help="identity | constant | prior:POSEFILE")
    s.add_argument("--out", required=True, help="relative rotations, one pose line per pair")
    s.add_argument("--stats", help="stats CSV (default: OUT.stats.csv)")
    s.add_argument("--directions", help="translation-direction sidecar (default: OUT.dirs)")
    s.add_argument("--confidence-threshold", type=float)
    s.add_argument("--config", help="run configuration TOML")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_f2f_solve)

    s = sub.add_parser("adjust", help="replace predicted rotations by F2F rotations")
    s.add_argument("--pred", required=True)
    s.add_argument("--f2f", required=True)
    s.add_argument("--f2f-kind", choices=("relative", "absolute"), default="relative")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_adjust)

    s = sub.add_parser("scale", help="adjust and rescale F2F directions against depth maps")
    s.add_argument("--pred", required=True)
    s.add_argument("--f2f", required=True)
    s.add_argument("--directions", required=True)
    s.add_argument("--matches", required=True)
    s.add_argument("--depths", required=True, help="directory of depth_XXXXXX.dpf files")
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stats")
    s.add_argument("--config")
    s.set_defaults(func=cmd_scale)

    s = sub.add_parser("eval", help="trajectory metrics")
    s.add_argument("--est", required=True, nargs="+")
    s.add_argument("--gt", required=True, nargs="+")
    s.add_argument("--align", choices=("7dof", "6dof", "none"), default="7dof")
    s.add_argument("--segments", type=float, nargs="+", default=list(ev.DEFAULT_SEGMENTS))
    s.add_argument("--segment-step", type=int, default=1)
    s.add_argument("--rpe-step", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--aligned-out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="write a synthetic sequence")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("losses", help="evaluate the training losses on one frame pair")
    s.add_argument("--image-a", required=True)
    s.add_argument("--image-b", required=True)
    s.add_argument("--depth-a", required=True)
    s.add_argument("--depth-b", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--motion", help="pose file with one line: motion from view a into view b")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_losses)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInput, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ArithmeticError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
