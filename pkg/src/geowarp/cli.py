"""Command-line front end: ``geowarp {synth,warp,loss,align,eval}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags (``--set key=value`` reaches
any key). The effective settings are embedded in every report.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .align import AlignConfig, perturb_pose, random_perturbation, refine_poses
from .config import ConfigError, read_config
from .dataset import (CAM_TO_WORLD, DatasetError, FrameRecord, load_sequence, pair_frames, range_filter,
                      resize_frame, sparsify_depth, write_sequence)
from .frames import FramePair
from .geometry import Pose, pose_to_transform, relative_transform, rotation_angle_deg
from .loss import LossWeights, total_loss
from .report import emit_report, pose_errors
from .synth import SyntheticScene, default_intrinsics, render_view, sequence_poses
from .warp import warp_image

__all__ = ["RunConfig", "main", "build_parser"]

EXIT_OK = 0
EXIT_INPUT = 2


@dataclass(frozen=True)
class RunConfig:
    # loss
    beta: float = 3.0
    lambda_d: float = 1.0
    lambda_p: float = 0.01
    lambda_s: float = 0.1
    h: float = 10.0
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    photometric_mean: bool = False
    per_channel: bool = False
    outlier_percentile: float | None = None
    # optimizer
    max_iterations: int = 200
    initial_step: float = 1e-2
    step_shrink: float = 0.5
    convergence_tol: float = 1e-7
    mode: str = "self_supervised"
    loss_tol: float = 1e-8
    patience: int = 3
    # data
    pose_convention: str = CAM_TO_WORLD
    sparsity: float = 0.0
    max_depth: float = math.inf
    resize_width: int = 0
    resize_height: int = 0
    prev: int = 0
    curr: int = 1
    stride: int = 1
    # perturbation of the initial poses (align, loss)
    perturb_translation: float = 0.02
    perturb_rotation_deg: float = 1.0
    # synthetic sequences
    frames: int = 5
    width: int = 160
    height: int = 120
    focal: float = 100.0
    distance: float = 2.0
    max_tilt_deg: float = 20.0
    step_x: float = 0.02
    step_rot_deg: float = 0.5
    # run
    seed: int = 0
    format: str = "json"

    def loss_weights(self) -> LossWeights:
        return LossWeights.from_dict(asdict(self))

    def align_config(self) -> AlignConfig:
        return AlignConfig.from_dict(asdict(self))

    def audit(self) -> dict:
        """Effective settings as JSON-safe values."""
        out = {}
        for k, v in asdict(self).items():
            out[k] = repr(v) if isinstance(v, float) and not math.isfinite(v) else v
        return out


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown setting {key!r}")
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "float | None":
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            values[k] = _coerce(k, v)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _coerce(key.strip(), value)
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    cfg.loss_weights()
    cfg.align_config()
    return cfg


def _write_output(data: bytes, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())


def _load_pairs(data_dir, cfg: RunConfig, all_pairs: bool = False) -> list[FramePair]:
    ids = None if all_pairs else [cfg.prev, cfg.curr]
    frames, K = load_sequence(data_dir, cfg.pose_convention, ids=ids)
    if K is None:
        raise DatasetError(f"{data_dir} has no sequence.cfg with intrinsics")
    K_in = K
    prepared = []
    for f in frames:
        if cfg.resize_width and cfg.resize_height:
            f, K = resize_frame(f, K_in, cfg.resize_width, cfg.resize_height)
        depth = f.depth
        if math.isfinite(cfg.max_depth):
            depth = range_filter(depth, cfg.max_depth)
        if cfg.sparsity > 0:
            depth = sparsify_depth(depth, cfg.sparsity, seed=[cfg.seed, f.frame_id])
        prepared.append(replace(f, depth=depth))
    return pair_frames(prepared, K, cfg.stride if all_pairs else 1)


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir or args.out or "synth-sequence")
    K = default_intrinsics(cfg.width, cfg.height, cfg.focal)
    scene = SyntheticScene.random(cfg.seed, K, distance=cfg.distance, max_tilt_deg=cfg.max_tilt_deg)
    frames = []
    for i, pose in enumerate(sequence_poses(cfg.frames, cfg.step_x, cfg.step_rot_deg)):
        img, depth = render_view(scene, pose)
        frames.append(FrameRecord(img, depth, pose, i, ""))
    write_sequence(out, frames, K, cfg.pose_convention)
    (out / "run.json").write_text(json.dumps({"command": "synth", "config": cfg.audit()}, sort_keys=True, indent=2) + "\n")
    print(f"wrote {cfg.frames} frames to {out}", file=sys.stderr)
    return EXIT_OK


def _to_png(values: np.ndarray, path: Path):
    Image.fromarray(np.rint(np.clip(values, 0, 1) * 255).astype(np.uint8)).save(path)


def cmd_warp(args) -> int:
    cfg = resolve_config(args)
    (pair,) = _load_pairs(args.data, cfg)
    T_rel = relative_transform(pose_to_transform(pair.gt_prev), pose_to_transform(pair.gt_curr))
    res = warp_image(pair.image_curr, pair.depth_prev, T_rel, pair.intrinsics, pair.ext_mask)
    valid = res.validity.keep
    flow = res.flow_l1[valid]
    stats = {
        "command": "warp",
        "frames": list(pair.frame_ids),
        "valid_pixel_count": int(valid.sum()),
        "gated_pixel_count": int((flow > cfg.h).sum()),
        "mean_flow_l1": float(flow.mean()) if flow.size else 0.0,
        "median_flow_l1": float(np.median(flow)) if flow.size else 0.0,
        "max_flow_l1": float(flow.max()) if flow.size else 0.0,
        "config": cfg.audit(),
    }
    text = json.dumps(stats, sort_keys=True, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _to_png(res.warped.data, out / "warped.png")
        _to_png(valid.astype(float), out / "validity.png")
        (out / "flow_stats.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _initial_poses(pair: FramePair, cfg: RunConfig, tag: int = 0):
    rng = np.random.default_rng([cfg.seed, tag])
    rot = math.radians(cfg.perturb_rotation_deg)
    init_prev = perturb_pose(pair.gt_prev, random_perturbation(rng, cfg.perturb_translation, rot))
    init_curr = perturb_pose(pair.gt_curr, random_perturbation(rng, cfg.perturb_translation, rot))
    if cfg.mode == "anchored":
        # the current pose is held at ground truth, so it starts there too
        init_curr = pair.gt_curr
    return init_prev, init_curr


def cmd_loss(args) -> int:
    cfg = resolve_config(args)
    (pair,) = _load_pairs(args.data, cfg)
    if args.at_ground_truth:
        pp, pc = pair.gt_prev, pair.gt_curr
    else:
        pp, pc = _initial_poses(pair, cfg)
    bd = total_loss(pair, cfg.loss_weights(), cfg.mode, pp, pc)
    doc = {"command": "loss", "frames": list(pair.frame_ids), **bd.to_dict(), "config": cfg.audit()}
    sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _pose_error_fields(prefix: str, pose: Pose, gt: Pose) -> dict:
    return {
        f"{prefix}_translation_error_m": float(np.linalg.norm(pose.position - gt.position)),
        f"{prefix}_rotation_error_deg": rotation_angle_deg(pose.orientation, gt.orientation),
    }


def _align_one(pair: FramePair, cfg: RunConfig, tag: int):
    init_prev, init_curr = _initial_poses(pair, cfg, tag)
    rep = refine_poses(pair, cfg.loss_weights(), cfg.align_config(), init_prev, init_curr)
    extra = {"command": "align", "frames": list(pair.frame_ids), "config": cfg.audit()}
    extra.update(_pose_error_fields("initial_prev", init_prev, pair.gt_prev))
    extra.update(_pose_error_fields("initial_curr", init_curr, pair.gt_curr))
    extra.update(_pose_error_fields("final_prev", rep.pose_prev, pair.gt_prev))
    extra.update(_pose_error_fields("final_curr", rep.pose_curr, pair.gt_curr))
    return emit_report(rep, cfg.format, extra)


def worker_count() -> int:
    env = os.environ.get("GEOWARP_THREADS", "")
    cap = int(env) if env.strip().isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, cap)


def cmd_align(args) -> int:
    cfg = resolve_config(args)
    pairs = _load_pairs(args.data, cfg, all_pairs=args.all_pairs)
    if not args.all_pairs:
        _write_output(_align_one(pairs[0], cfg, 0), args.out)
        return EXIT_OK
    if not args.out:
        raise ConfigError("--all-pairs needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        docs = list(pool.map(lambda ip: _align_one(ip[1], cfg, ip[0]), enumerate(pairs)))
    for pair, doc in zip(pairs, docs):
        a, b = pair.frame_ids
        (out / f"align-{a:06d}-{b:06d}.{cfg.format}").write_bytes(doc)
    return EXIT_OK


def read_pose_list(path) -> list[Pose]:
    """One pose per line: ``x y z qw qx qy qz``; ``#`` starts a comment."""
    poses = []
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 7:
            raise DatasetError(f"{path}:{lineno}: expected 7 numbers, got {len(parts)}")
        try:
            vals = [float(x) for x in parts]
        except ValueError as e:
            raise DatasetError(f"{path}:{lineno}: {e}") from e
        poses.append(Pose(vals[:3], vals[3:]))
    return poses


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    pred = read_pose_list(args.pred)
    gt = read_pose_list(args.gt)
    table = pose_errors(pred, gt)
    extra = {"command": "eval", "config": cfg.audit()}
    _write_output(emit_report(table, cfg.format, extra), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any setting")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["anchored", "self_supervised"])
    p.add_argument("--sparsity", type=float, help="fraction of valid depth to remove")
    p.add_argument("--max-depth", dest="max_depth", type=float, metavar="METERS")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--pose-convention", dest="pose_convention", choices=["cam_to_world", "world_to_cam"])
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geowarp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic RGB-D sequence")
    _common(p)
    p.add_argument("out_dir", nargs="?")
    p.add_argument("--frames", type=int)
    p.add_argument("--step-x", dest="step_x", type=float, help="camera x step per frame, metres")
    p.add_argument("--step-rot-deg", dest="step_rot_deg", type=float)
    p.add_argument("--max-tilt-deg", dest="max_tilt_deg", type=float)
    p.set_defaults(func=cmd_synth)

    for name, func, text in (("warp", cmd_warp, "warp the current frame onto the previous one"),
                             ("loss", cmd_loss, "print the loss breakdown for a frame pair"),
                             ("align", cmd_align, "refine both poses of a frame pair")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("data", help="sequence directory")
        p.add_argument("--prev", type=int)
        p.add_argument("--curr", type=int)
        p.add_argument("--perturb-translation", dest="perturb_translation", type=float, metavar="METERS")
        p.add_argument("--perturb-rotation-deg", dest="perturb_rotation_deg", type=float)
        p.set_defaults(func=func)
        if name == "loss":
            p.add_argument("--at-ground-truth", action="store_true", help="evaluate at the ground-truth poses")
        if name == "align":
            p.add_argument("--all-pairs", action="store_true", help="align every (i, i+stride) pair into --out DIR")

    p = sub.add_parser("eval", help="median translation/rotation errors of a pose list")
    _common(p)
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"geowarp {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
