"""Depth-driven warping of the current image onto the previous frame's grid.

For every previous-frame pixel ``u`` with valid depth ``d`` the camera-frame
point ``d K^-1 u`` is moved by the relative transform, projected with ``K``
and the current image is bilinearly sampled there. The synthesized image
therefore lives on the previous frame's pixel grid and is compared against
the previous image pixel by pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Intrinsics, RigidTransform, backproject
from .imaging import DepthMap, ImageBuffer, ImagingError, PixelMask, sample_bilinear, snap_to_grid

__all__ = ["WarpResult", "WarpSamples", "warp_pixel", "warp_image", "warp_samples"]


@dataclass(frozen=True, eq=False)
class WarpResult:
    """Synthesized image plus bookkeeping, all on the previous-frame grid.

    Invalid pixels hold zero in ``warped``, ``flow_l1`` and ``points_cam_t``.
    """

    warped: ImageBuffer
    validity: PixelMask
    flow_l1: np.ndarray
    points_cam_t: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class WarpSamples:
    """Flat per-pixel warp data for the pixels that had usable depth.

    ``index`` holds flat previous-grid indices; every other array is aligned
    with it. ``inside`` marks pixels whose sample fell inside the current
    image with positive depth.
    """

    index: np.ndarray
    points_prev: np.ndarray  # (N, 3) previous camera frame
    points_curr: np.ndarray  # (N, 3) current camera frame
    u: np.ndarray
    v: np.ndarray
    values: np.ndarray  # (N, C)
    grads: np.ndarray  # (N, C, 2)
    inside: np.ndarray
    flow_l1: np.ndarray


def warp_pixel(u_prev, depth: float, T_rel: RigidTransform, K: Intrinsics):
    """Move one pixel from the previous frame into the current one.

    Returns ``(u_curr, z_curr)``; raises :class:`GeometryError` when the
    transformed point is not in front of the current camera.
    """
    p = T_rel.apply(backproject(u_prev, depth, K))
    if not p[2] > 0:
        raise GeometryError("warped point is behind the current camera")
    return np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy]), float(p[2])


def _pixel_grid(K: Intrinsics):
    vv, uu = np.mgrid[0:K.height, 0:K.width]
    return uu.ravel().astype(float), vv.ravel().astype(float)


def warp_samples(I_t: ImageBuffer, D_prev: DepthMap, T_rel: RigidTransform, K: Intrinsics,
                 keep: np.ndarray | None = None) -> WarpSamples:
    """Vectorized core of :func:`warp_image`.

    ``keep`` optionally restricts the source pixels (flattened or 2-D).
    """
    H, W = D_prev.shape
    if I_t.shape != (H, W) or (K.height, K.width) != (H, W):
        raise ImagingError("image, depth and intrinsics dimensions must agree")
    src = D_prev.valid.ravel()
    if keep is not None:
        keep = np.asarray(keep, dtype=bool).ravel()
        if keep.size != src.size:
            raise ImagingError("mask dimensions must agree with the depth map")
        src = src & keep
    index = np.flatnonzero(src)
    uu, vv = _pixel_grid(K)
    u0 = uu[index]
    v0 = vv[index]
    d = D_prev.depth.ravel()[index]

    pts_prev = np.column_stack([(u0 - K.cx) / K.fx * d, (v0 - K.cy) / K.fy * d, d])
    pts_curr = T_rel.apply(pts_prev)
    z = pts_curr[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u1 = K.fx * pts_curr[:, 0] / zs + K.cx
    v1 = K.fy * pts_curr[:, 1] / zs + K.cy
    u1 = np.where(front, snap_to_grid(u1), -1.0)
    v1 = np.where(front, snap_to_grid(v1), -1.0)

    values, grads, inside = sample_bilinear(I_t.planes(), u1, v1)
    inside &= front
    flow = np.where(inside, np.abs(u1 - u0) + np.abs(v1 - v0), 0.0)
    return WarpSamples(index, pts_prev, pts_curr, u1, v1, values, grads, inside, flow)


def warp_image(I_t: ImageBuffer, D_prev: DepthMap, T_rel: RigidTransform, K: Intrinsics,
               ext_mask: PixelMask | None = None, keep_points: bool = False) -> WarpResult:
    """Synthesize the warped image on the previous frame's grid.

    A pixel is valid when it has depth, is kept by ``ext_mask``, lands in
    front of the current camera and samples inside ``I_t``.
    """
    H, W = D_prev.shape
    if ext_mask is not None and ext_mask.shape != (H, W):
        raise ImagingError("external mask dimensions must agree with the depth map")
    s = warp_samples(I_t, D_prev, T_rel, K, None if ext_mask is None else ext_mask.keep)
    C = I_t.channels
    ok = s.index[s.inside]

    warped = np.zeros((H * W, C))
    # Bilinear blends are convex; the clip only removes 1-ulp overshoot.
    warped[ok] = np.clip(s.values[s.inside], 0.0, 1.0)
    valid = np.zeros(H * W, dtype=bool)
    valid[ok] = True
    flow = np.zeros(H * W)
    flow[ok] = s.flow_l1[s.inside]
    points = None
    if keep_points:
        points = np.zeros((H * W, 3))
        points[ok] = s.points_curr[s.inside]
        points = points.reshape(H, W, 3)

    warped = warped.reshape(H, W, C) if C > 1 else warped.reshape(H, W)
    return WarpResult(ImageBuffer(warped), PixelMask(valid.reshape(H, W)), flow.reshape(H, W), points)
