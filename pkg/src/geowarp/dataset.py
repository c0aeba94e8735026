"""RGB-D sequence I/O and preprocessing.

On-disk layout (one directory per sequence)::

    frame-000000.color.png   8-bit RGB (or 8-bit gray)
    frame-000000.depth.png   16-bit depth in millimetres; 0 and 65535 are invalid
    frame-000000.pose.txt    4x4 row-major homogeneous matrix
    sequence.cfg             optional ``key = value`` file with fx, fy, cx, cy,
                             width, height and pose_convention

Pose files are camera-to-world by default, as in common public RGB-D
corpora; ``pose_convention = world_to_cam`` reads them as-is. Poses are
always held in memory as world-to-camera.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import read_config, write_config
from .frames import FramePair
from .geometry import GeometryError, Intrinsics, Pose, matrix_to_quat, pose_to_transform
from .imaging import DepthMap, ImageBuffer, ImagingError, sample_bilinear

__all__ = [
    "DatasetError",
    "InvalidPoseError",
    "FrameRecord",
    "CAM_TO_WORLD",
    "WORLD_TO_CAM",
    "DEPTH_SCALE",
    "read_pose_file",
    "write_pose_file",
    "load_frame",
    "save_frame",
    "frame_paths",
    "load_sequence",
    "write_sequence",
    "read_intrinsics",
    "resize_frame",
    "sparsify_depth",
    "range_filter",
    "pair_frames",
]

CAM_TO_WORLD = "cam_to_world"
WORLD_TO_CAM = "world_to_cam"
POSE_CONVENTIONS = (CAM_TO_WORLD, WORLD_TO_CAM)
DEPTH_SCALE = 1000.0  # file units per metre
_DEPTH_INVALID = (0, 65535)
_FRAME_RE = re.compile(r"frame-(\d+)\.color\.png$")


class DatasetError(OSError):
    """A frame file is missing or cannot be decoded."""


class InvalidPoseError(GeometryError):
    """A pose matrix is not a proper rigid transform."""


@dataclass(frozen=True, eq=False)
class FrameRecord:
    image: ImageBuffer
    depth: DepthMap
    pose_gt: Pose
    frame_id: int = 0
    source_path: str = ""

    def __post_init__(self):
        if self.image.shape != self.depth.shape:
            raise ImagingError(f"image {self.image.shape} and depth {self.depth.shape} differ in size")


def _check_convention(convention: str):
    if convention not in POSE_CONVENTIONS:
        raise ValueError(f"pose convention must be one of {POSE_CONVENTIONS}, got {convention!r}")


def read_pose_file(path, convention: str = CAM_TO_WORLD) -> Pose:
    """Parse a 4x4 pose matrix and return the world-to-camera pose."""
    _check_convention(convention)
    try:
        M = np.loadtxt(path, dtype=float)
    except OSError as e:
        raise DatasetError(f"cannot read pose file {path}: {e}") from e
    except ValueError as e:
        raise DatasetError(f"corrupt pose file {path}: {e}") from e
    if M.shape != (4, 4) or not np.all(np.isfinite(M)):
        raise DatasetError(f"pose file {path} does not hold a finite 4x4 matrix")
    R, t = M[:3, :3], M[:3, 3]
    resid = np.abs(R @ R.T - np.eye(3)).max()
    if resid > 1e-3 or np.linalg.det(R) <= 0 or np.abs(M[3] - [0, 0, 0, 1]).max() > 1e-6:
        raise InvalidPoseError(f"pose in {path} is not rigid (orthonormality residual {resid:.3g})")
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    if convention == CAM_TO_WORLD:
        R, t = R.T, -R.T @ t
    return Pose(t, matrix_to_quat(R))


def write_pose_file(path, pose: Pose, convention: str = CAM_TO_WORLD) -> None:
    _check_convention(convention)
    M = pose_to_transform(pose).matrix()
    if convention == CAM_TO_WORLD:
        R, t = M[:3, :3].T, -M[:3, :3].T @ M[:3, 3]
        M[:3, :3], M[:3, 3] = R, t
    with open(path, "w") as fh:
        for row in M:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def _open_image(path) -> Image.Image:
    try:
        im = Image.open(path)
        im.load()
        return im
    except FileNotFoundError as e:
        raise DatasetError(f"missing file {path}") from e
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"cannot decode {path}: {e}") from e


def _read_color(path) -> ImageBuffer:
    im = _open_image(path)
    if im.mode not in ("RGB", "L"):
        im = im.convert("RGB")
    return ImageBuffer(np.asarray(im, dtype=float) / 255.0)


def _read_depth(path) -> DepthMap:
    raw = np.asarray(_open_image(path)).astype(np.int64)
    if raw.ndim != 2:
        raise DatasetError(f"depth image {path} must be single-channel")
    valid = ~np.isin(raw, _DEPTH_INVALID)
    return DepthMap(raw / DEPTH_SCALE, valid)


def load_frame(rgb_path, depth_path, pose_path, pose_convention: str = CAM_TO_WORLD,
               frame_id: int = 0) -> FrameRecord:
    """Read one RGB-D frame with its ground-truth pose."""
    image = _read_color(rgb_path)
    depth = _read_depth(depth_path)
    pose = read_pose_file(pose_path, pose_convention)
    if image.shape != depth.shape:
        raise DatasetError(f"{rgb_path} and {depth_path} have different sizes")
    return FrameRecord(image, depth, pose, frame_id, str(rgb_path))


def save_frame(frame: FrameRecord, rgb_path, depth_path, pose_path, pose_convention: str = CAM_TO_WORLD) -> None:
    """Write a frame in the on-disk encoding; inverse of :func:`load_frame`."""
    img = np.rint(frame.image.data * 255.0).astype(np.uint8)
    Image.fromarray(img).save(rgb_path)
    mm = np.rint(frame.depth.depth * DEPTH_SCALE)
    ok = frame.depth.valid & (mm > 0) & (mm < 65535)
    Image.fromarray(np.where(ok, mm, 0).astype(np.uint16)).save(depth_path)
    write_pose_file(pose_path, frame.pose_gt, pose_convention)


def frame_paths(directory, frame_id: int):
    d = Path(directory)
    stem = f"frame-{frame_id:06d}"
    return d / f"{stem}.color.png", d / f"{stem}.depth.png", d / f"{stem}.pose.txt"


def read_intrinsics(values: dict) -> Intrinsics:
    try:
        return Intrinsics(float(values["fx"]), float(values["fy"]), float(values["cx"]), float(values["cy"]),
                          int(values["width"]), int(values["height"]))
    except KeyError as e:
        raise DatasetError(f"missing intrinsics field {e.args[0]!r}") from e


def load_sequence(directory, pose_convention: str | None = None, ids=None):
    """Load every frame of a sequence directory, sorted by frame id.

    Returns ``(frames, intrinsics)``; intrinsics are ``None`` when the
    directory has no ``sequence.cfg``. ``pose_convention`` overrides the
    value stored there.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"sequence directory {d} does not exist")
    meta = {}
    if (d / "sequence.cfg").exists():
        meta = read_config(d / "sequence.cfg")
    convention = pose_convention or meta.get("pose_convention", CAM_TO_WORLD)
    intrinsics = read_intrinsics(meta) if "fx" in meta else None
    if ids is None:
        ids = sorted(int(m.group(1)) for name in os.listdir(d) if (m := _FRAME_RE.match(name)))
    frames = [load_frame(*frame_paths(d, i), pose_convention=convention, frame_id=i) for i in ids]
    return frames, intrinsics


def write_sequence(directory, frames, intrinsics: Intrinsics, pose_convention: str = CAM_TO_WORLD) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for f in frames:
        save_frame(f, *frame_paths(d, f.frame_id), pose_convention=pose_convention)
    write_config(d / "sequence.cfg", {
        "fx": intrinsics.fx, "fy": intrinsics.fy, "cx": intrinsics.cx, "cy": intrinsics.cy,
        "width": intrinsics.width, "height": intrinsics.height, "pose_convention": pose_convention,
    })


def resize_frame(f: FrameRecord, K: Intrinsics, target_w: int, target_h: int):
    """Downsample a frame and rescale its intrinsics.

    The image is resampled bilinearly at the target pixel centres; depth
    takes the nearest source pixel so no depth is invented across edges.
    """
    H, W = f.image.shape
    if target_w <= 0 or target_h <= 0:
        raise ImagingError("target dimensions must be positive")
    if target_w > W or target_h > H:
        raise ImagingError(f"refusing to upsample {W}x{H} to {target_w}x{target_h}")
    sx, sy = target_w / W, target_h / H
    if (target_w, target_h) == (W, H):
        return f, K

    cols = (np.arange(target_w) + 0.5) / sx - 0.5
    rows = (np.arange(target_h) + 0.5) / sy - 0.5
    uu, vv = np.meshgrid(np.clip(cols, 0, W - 1), np.clip(rows, 0, H - 1))
    values, _, _ = sample_bilinear(f.image.planes(), uu.ravel(), vv.ravel())
    img = values.reshape(target_h, target_w, -1)
    image = ImageBuffer(np.clip(img, 0.0, 1.0))

    ci = np.minimum(np.floor((np.arange(target_w) + 0.5) / sx).astype(int), W - 1)
    ri = np.minimum(np.floor((np.arange(target_h) + 0.5) / sy).astype(int), H - 1)
    depth = DepthMap(f.depth.depth[np.ix_(ri, ci)], f.depth.valid[np.ix_(ri, ci)])

    K2 = Intrinsics(K.fx * sx, K.fy * sy, (K.cx + 0.5) * sx - 0.5, (K.cy + 0.5) * sy - 0.5, target_w, target_h)
    return replace(f, image=image, depth=depth), K2


def sparsify_depth(d: DepthMap, remove_fraction: float, seed=None) -> DepthMap:
    """Invalidate exactly ``round(remove_fraction * valid_count)`` pixels.

    The pixels are picked by a seeded uniform shuffle; surviving depths are
    untouched.
    """
    if not 0.0 <= remove_fraction <= 1.0:
        raise ValueError("remove_fraction must lie in [0, 1]")
    idx = np.flatnonzero(d.valid)
    k = int(math.floor(remove_fraction * idx.size + 0.5))
    if k == 0:
        return d
    drop = np.random.default_rng(seed).permutation(idx)[:k]
    valid = d.valid.copy().ravel()
    valid[drop] = False
    return DepthMap(d.depth, valid.reshape(d.shape))


def range_filter(d: DepthMap, max_depth: float) -> DepthMap:
    """Invalidate depths at or beyond ``max_depth`` metres."""
    if not max_depth > 0:
        raise ValueError("max_depth must be positive")
    return DepthMap(d.depth, d.valid & (d.depth < max_depth))


def pair_frames(frames, intrinsics: Intrinsics, stride: int = 1) -> list[FramePair]:
    """Pairs ``(i, i + stride)`` carrying depth of the earlier frame only."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    frames = list(frames)
    return [
        FramePair(a.image, b.image, a.depth, a.pose_gt, b.pose_gt, intrinsics, frame_ids=(a.frame_id, b.frame_id))
        for a, b in zip(frames, frames[stride:])
    ]
