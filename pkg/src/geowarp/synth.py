"""Textured-plane scenes rendered exactly, used as ground truth for every check.

Depth comes from a closed-form ray/plane intersection and intensity from an
analytic texture evaluated at the intersection point, so renders carry no
resampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import FramePair
from .geometry import GeometryError, Intrinsics, Pose
from .imaging import DepthMap, ImageBuffer

__all__ = ["SyntheticScene", "default_intrinsics", "render_view", "render_points", "make_pair",
           "image_gradient", "random_pair", "sequence_poses"]


def default_intrinsics(width: int = 160, height: int = 120, focal: float = 100.0) -> Intrinsics:
    return Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Plane ``normal . X = offset`` (world frame) carrying a sinusoid texture.

    The texture is ``0.5 + sum_k a_k sin(2 pi f_k . p + phase_k)`` with ``p``
    the 2-D coordinate of the point in the plane basis ``(e1, e2)``.
    """

    normal: np.ndarray
    offset: float
    amplitudes: np.ndarray
    frequencies: np.ndarray  # (k, 2) cycles per metre
    phases: np.ndarray
    intrinsics: Intrinsics
    seed: int | None = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "amplitudes", np.asarray(self.amplitudes, dtype=float))
        object.__setattr__(self, "frequencies", np.asarray(self.frequencies, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=float))
        if np.abs(self.amplitudes).sum() > 0.5:
            raise ValueError("texture amplitudes must sum to at most 0.5")

    @classmethod
    def random(cls, seed: int, intrinsics: Intrinsics | None = None, distance: float = 2.0,
               max_tilt_deg: float = 20.0, n_waves: int = 5,
               wavelength_px: tuple[float, float] = (16.0, 48.0)) -> "SyntheticScene":
        """Seeded plane in front of the origin camera.

        Wavelengths are drawn in image pixels as seen from ``distance``; the
        lower bound 16 px keeps every wave at most a quarter of Nyquist
        even with oblique viewing.
        """
        K = intrinsics or default_intrinsics()
        rng = np.random.default_rng(seed)
        tilt = math.radians(rng.uniform(0.0, max_tilt_deg))
        az = rng.uniform(0.0, 2 * math.pi)
        normal = np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), math.cos(tilt)])
        offset = distance * normal[2]
        metres_per_px = distance / K.fx
        wl = rng.uniform(*wavelength_px, size=n_waves) * metres_per_px
        ang = rng.uniform(0.0, 2 * math.pi, size=n_waves)
        freqs = np.column_stack([np.cos(ang), np.sin(ang)]) / wl[:, None]
        amps = rng.uniform(0.5, 1.0, size=n_waves)
        amps *= 0.45 / amps.sum()
        phases = rng.uniform(0.0, 2 * math.pi, size=n_waves)
        return cls(normal, offset, amps, freqs, phases, K, seed)

    def basis(self):
        n = self.normal
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(helper, n)
        e1 /= np.linalg.norm(e1)
        return e1, np.cross(n, e1)

    def texture(self, points_world: np.ndarray) -> np.ndarray:
        e1, e2 = self.basis()
        p = np.column_stack([points_world @ e1, points_world @ e2])
        arg = 2 * math.pi * p @ self.frequencies.T + self.phases
        return 0.5 + np.sin(arg) @ self.amplitudes

    def texture_gradient(self, points_world: np.ndarray) -> np.ndarray:
        """Gradient of the texture w.r.t. world position, shape (N, 3)."""
        e1, e2 = self.basis()
        p = np.column_stack([points_world @ e1, points_world @ e2])
        arg = 2 * math.pi * p @ self.frequencies.T + self.phases
        dp = (np.cos(arg) * self.amplitudes) @ (2 * math.pi * self.frequencies)
        return np.outer(dp[:, 0], e1) + np.outer(dp[:, 1], e2)


def _intersect(scene: SyntheticScene, pose: Pose, u: np.ndarray, v: np.ndarray):
    K = scene.intrinsics
    R = pose.rotation
    rays_cam = np.column_stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)])
    dirs = rays_cam @ R  # rows are R^T r
    center = pose.camera_center()
    denom = dirs @ scene.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = (scene.offset - scene.normal @ center) / denom
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise GeometryError("plane is not in front of the camera at every pixel")
    return center + depth[:, None] * dirs, depth, dirs


def render_points(scene: SyntheticScene, pose: Pose, u, v):
    """Exact intensity and depth at continuous pixel coordinates."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    X, depth, _ = _intersect(scene, pose, u, v)
    return scene.texture(X), depth


def image_gradient(scene: SyntheticScene, pose: Pose, u, v) -> np.ndarray:
    """Analytic ``d intensity / d (u, v)`` at continuous pixels, shape (N, 2)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    K = scene.intrinsics
    X, depth, dirs = _intersect(scene, pose, u, v)
    gt = scene.texture_gradient(X)
    n = scene.normal
    nd = dirs @ n
    R = pose.rotation
    out = np.empty((u.size, 2))
    for k, col in enumerate((R[0] / K.fx, R[1] / K.fy)):
        # dX = depth * (I - d n^T / (n.d)) dd, with dd = R^T e_k / f_k
        dX = depth[:, None] * (col - dirs * ((col @ n) / nd)[:, None])
        out[:, k] = np.einsum("ij,ij->i", gt, dX)
    return out


def render_view(scene: SyntheticScene, pose: Pose):
    """Render ``(ImageBuffer, DepthMap)`` from a world-to-camera pose."""
    K = scene.intrinsics
    vv, uu = np.mgrid[0:K.height, 0:K.width]
    intensity, depth = render_points(scene, pose, uu.ravel().astype(float), vv.ravel().astype(float))
    shape = (K.height, K.width)
    return ImageBuffer(intensity.reshape(shape)), DepthMap(depth.reshape(shape))


def make_pair(scene: SyntheticScene, pose_prev: Pose, pose_curr: Pose, depth_noise: float = 0.0,
              intensity_noise: float = 0.0, seed: int | None = None) -> FramePair:
    """Render both frames; optional Gaussian noise is drawn from ``seed``."""
    img_prev, depth_prev = render_view(scene, pose_prev)
    img_curr, _ = render_view(scene, pose_curr)
    if depth_noise > 0 or intensity_noise > 0:
        rng = np.random.default_rng(seed)
        if depth_noise > 0:
            noisy = depth_prev.depth + rng.normal(0.0, depth_noise, depth_prev.shape)
            depth_prev = DepthMap(noisy, depth_prev.valid & (noisy > 0))
        if intensity_noise > 0:
            img_prev = ImageBuffer(np.clip(img_prev.data + rng.normal(0.0, intensity_noise, img_prev.shape), 0, 1))
            img_curr = ImageBuffer(np.clip(img_curr.data + rng.normal(0.0, intensity_noise, img_curr.shape), 0, 1))
    return FramePair(img_prev, img_curr, depth_prev, pose_prev, pose_curr, scene.intrinsics)


def random_pair(seed: int, intrinsics: Intrinsics | None = None, base_motion=(0.10, math.radians(5.0)),
                relative_motion=(0.05, math.radians(2.0)), **scene_kw) -> FramePair:
    """Seeded noise-free pair on a random textured plane.

    The previous pose is the identity perturbed by up to ``base_motion``
    (metres, radians); the current pose moves by up to ``relative_motion``
    from it.
    """
    from .align import perturb_pose, random_perturbation

    rng = np.random.default_rng([seed, 1])
    scene = SyntheticScene.random(seed, intrinsics, **scene_kw)
    gt_prev = perturb_pose(Pose.identity(), random_perturbation(rng, *base_motion))
    gt_curr = perturb_pose(gt_prev, random_perturbation(rng, *relative_motion))
    return make_pair(scene, gt_prev, gt_curr)


def sequence_poses(n_frames: int, step_x: float = 0.02, step_rot_deg: float = 0.5) -> list[Pose]:
    """Camera sliding along world +x while panning about +y, one step per frame."""
    poses = []
    for i in range(n_frames):
        a = math.radians(i * step_rot_deg)
        q = np.array([math.cos(a / 2), 0.0, math.sin(a / 2), 0.0])
        R = Pose(np.zeros(3), q).rotation
        center = np.array([i * step_x, 0.0, 0.0])
        poses.append(Pose(-R @ center, q))
    return poses
