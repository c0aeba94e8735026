"""Pose, photometric and structural-similarity losses with analytic gradients.

The composite objective is

    total = lambda_d * L_D + lambda_p * L_P + lambda_s * L_S

where ``L_D`` is the Euclidean pose error of both frames, ``L_P`` the masked
L1 photometric error between the warped current image and the previous
image, and ``L_S = (1 - SSIM) / 2`` computed from global image statistics.

Gradients are taken with respect to a local 12-vector

    [d_trans_prev, d_rot_prev, d_trans_curr, d_rot_curr]

where each pose is updated as ``R <- Exp(d_rot) R`` and ``t <- t + d_trans``.
The pixel selection (validity, the flow gate ``h`` and optional outlier
rejection) is recomputed on every evaluation and held constant while
differentiating.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .frames import FramePair
from .geometry import Pose, pose_to_transform, relative_transform, skew
from .imaging import LUMA_WEIGHTS, ImageBuffer, ImagingError, PixelMask, _moments, to_grayscale
from .warp import WarpResult, warp_samples

__all__ = [
    "ANCHORED",
    "SELF_SUPERVISED",
    "MODES",
    "LossWeights",
    "LossBreakdown",
    "PhotometricResult",
    "euclidean_pose_loss",
    "photometric_loss",
    "ssim",
    "ssim_loss",
    "total_loss",
    "total_loss_gradient",
    "selection_mask",
]

ANCHORED = "anchored"
SELF_SUPERVISED = "self_supervised"
MODES = (ANCHORED, SELF_SUPERVISED)


@dataclass(frozen=True)
class LossWeights:
    """Loss constants.

    ``beta`` weighs orientation against position error; ``lambda_*`` weigh
    the three terms; ``h`` is the flow gate in pixels (L1 displacement).
    ``c1``/``c2`` stabilize SSIM for intensities in [0, 1].

    ``photometric_mean`` divides the photometric sum by the pixel count,
    ``per_channel`` compares RGB channels instead of luminance, and
    ``outlier_percentile`` (e.g. 5.0) drops that top share of residuals.
    """

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

    def __post_init__(self):
        for name in ("beta", "lambda_d", "lambda_p", "lambda_s"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("h", "c1", "c2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        p = self.outlier_percentile
        if p is not None and not 0 < p < 100:
            raise ValueError("outlier_percentile must lie in (0, 100)")

    def combine(self, l_d: float, l_p: float, l_s: float) -> float:
        """Weighted sum of the three terms."""
        return self.lambda_d * l_d + self.lambda_p * l_p + self.lambda_s * l_s

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class LossBreakdown:
    l_d: float
    l_p: float
    l_s: float
    total: float
    valid_pixel_count: int
    gated_pixel_count: int
    used_pixel_count: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class PhotometricResult(NamedTuple):
    value: float
    residuals: np.ndarray  # previous-grid residuals, zero outside the selection
    selection: np.ndarray  # bool (H, W)
    gated_pixel_count: int
    degenerate: bool


def euclidean_pose_loss(pred_prev: Pose, gt_prev: Pose, pred_curr: Pose, gt_curr: Pose,
                        beta: float = 3.0) -> float:
    """Sum over both frames of ``|x - x_gt| + beta |q - q_gt|``."""
    total = 0.0
    for pred, gt in ((pred_prev, gt_prev), (pred_curr, gt_curr)):
        total += float(np.linalg.norm(pred.position - gt.position))
        total += beta * float(np.linalg.norm(pred.orientation - gt.orientation))
    return total


def _pose_loss_grad(pred: Pose, gt: Pose, beta: float) -> np.ndarray:
    g = np.zeros(6)
    dx = pred.position - gt.position
    n = np.linalg.norm(dx)
    if n > 0:
        g[:3] = dx / n
    dq = pred.orientation - gt.orientation
    n = np.linalg.norm(dq)
    if n > 0:
        w, v = pred.orientation[0], pred.orientation[1:]
        dq_dphi = 0.5 * np.vstack([-v, w * np.eye(3) - skew(v)])
        g[3:] = beta * (dq / n) @ dq_dphi
    return g


def _check_same_grid(*shapes):
    if len(set(shapes)) != 1:
        raise ImagingError(f"dimension mismatch: {shapes}")


def _gate(weights: LossWeights, valid: np.ndarray, flow: np.ndarray):
    """Validity combined with the flow gate; returns (selection, gated count)."""
    gated = valid & (flow > weights.h)
    return valid & ~gated, int(gated.sum())


def _outlier_cut(sel: np.ndarray, abs_res: np.ndarray, pct: float | None) -> np.ndarray:
    if pct is None or not sel.any():
        return sel
    cut = np.percentile(abs_res[sel], 100.0 - pct)
    return sel & (abs_res <= cut)


def photometric_loss(I_prev: ImageBuffer, warp: WarpResult, weights: LossWeights = LossWeights()) -> PhotometricResult:
    """Masked L1 difference between the warped image and ``I_prev``.

    The mask is the warp validity restricted to pixels whose flow stays
    within ``weights.h``. With no surviving pixels the value is 0 and the
    ``degenerate`` flag is set.
    """
    _check_same_grid(I_prev.shape, warp.warped.shape, warp.validity.shape)
    a, b = I_prev, warp.warped
    if not weights.per_channel and a.channels == 3:
        a = to_grayscale(a)
    if b.channels != a.channels:
        b = to_grayscale(b) if b.channels == 3 else b
    if a.channels != b.channels:
        raise ImagingError("channel mismatch between comparison and warped images")
    diff = b.planes() - a.planes()
    abs_res = np.abs(diff).mean(axis=2)
    sel, gated = _gate(weights, warp.validity.keep, warp.flow_l1)
    sel = _outlier_cut(sel, abs_res, weights.outlier_percentile)
    n = int(sel.sum())
    value = float(abs_res[sel].sum())
    if weights.photometric_mean and n:
        value /= n
    residuals = np.where(sel[:, :, None], diff, 0.0)
    residuals = residuals[:, :, 0] if residuals.shape[2] == 1 else residuals
    return PhotometricResult(value, residuals, sel, gated, n == 0)


def _ssim_and_grad(x: np.ndarray, y: np.ndarray, c1: float, c2: float, want_grad: bool):
    st = _moments(x, y)
    a1 = 2 * st.mu_x * st.mu_y + c1
    a2 = 2 * st.cov_xy + c2
    b1 = st.mu_x ** 2 + st.mu_y ** 2 + c1
    b2 = st.var_x + st.var_y + c2
    s = (a1 * a2) / (b1 * b2)
    if not want_grad:
        return s, None
    n = x.size
    dy = (2 * st.mu_x / a1 - 2 * st.mu_y / b1) / n \
        + (2 * (x - st.mu_x) / a2 - 2 * (y - st.mu_y) / b2) / n
    return s, s * dy


def ssim(a: ImageBuffer, b: ImageBuffer, mask: PixelMask | None = None,
         c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Structural similarity from global statistics over ``mask``."""
    if a.channels != 1 or b.channels != 1:
        raise ImagingError("ssim expects single-channel images")
    _check_same_grid(a.shape, b.shape, a.shape if mask is None else mask.shape)
    sel = np.ones(a.shape, dtype=bool) if mask is None else mask.keep
    return float(_ssim_and_grad(a.data[sel], b.data[sel], c1, c2, False)[0])


def ssim_loss(I_comparison: ImageBuffer, warp: WarpResult, weights: LossWeights = LossWeights()) -> float:
    """``(1 - SSIM) / 2`` over valid pixels that pass the flow gate."""
    a = I_comparison if I_comparison.channels == 1 else to_grayscale(I_comparison)
    b = warp.warped if warp.warped.channels == 1 else to_grayscale(warp.warped)
    sel, _ = _gate(weights, warp.validity.keep, warp.flow_l1)
    return (1.0 - ssim(a, b, PixelMask(sel), weights.c1, weights.c2)) / 2.0


def _warp_poses(pair: FramePair, pose_prev: Pose, pose_curr: Pose, mode: str):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return pose_prev, (pair.gt_curr if mode == ANCHORED else pose_curr)


def _comparison_images(pair: FramePair, weights: LossWeights):
    """Images actually compared: luminance unless per-channel mode is on."""
    prev, curr = pair.image_prev, pair.image_curr
    if prev.channels == 3 and not weights.per_channel:
        prev, curr = to_grayscale(prev), to_grayscale(curr)
    return prev, curr


def _evaluate(pair: FramePair, weights: LossWeights, mode: str, pose_prev: Pose | None,
              pose_curr: Pose | None, selection, want_grad: bool):
    pose_prev = pair.gt_prev if pose_prev is None else pose_prev
    pose_curr = pair.gt_curr if pose_curr is None else pose_curr
    wp, wc = _warp_poses(pair, pose_prev, pose_curr, mode)
    T1, T2 = pose_to_transform(wp), pose_to_transform(wc)
    T_rel = relative_transform(T1, T2)
    I_prev, I_curr = _comparison_images(pair, weights)
    K = pair.intrinsics
    ext = None if pair.ext_mask is None else pair.ext_mask.keep
    s = warp_samples(I_curr, pair.depth_prev, T_rel, K, ext)

    C = I_curr.channels
    prev_planes = I_prev.planes().reshape(-1, C)
    cand = s.inside
    gated = cand & (s.flow_l1 > weights.h)
    gated_count = int(gated.sum())
    if selection is None:
        chosen = cand & ~gated
    else:
        chosen = cand & np.asarray(selection, dtype=bool).ravel()[s.index]

    idx = np.flatnonzero(chosen)
    res = s.values[idx] - prev_planes[s.index[idx]]  # (n, C)
    abs_res = np.abs(res).mean(axis=1)
    if selection is None and weights.outlier_percentile is not None and idx.size:
        keep = abs_res <= np.percentile(abs_res, 100.0 - weights.outlier_percentile)
        idx, res, abs_res = idx[keep], res[keep], abs_res[keep]
    n = idx.size

    l_d = euclidean_pose_loss(pose_prev, pair.gt_prev, pose_curr, pair.gt_curr, weights.beta)
    lum = LUMA_WEIGHTS if C == 3 else np.ones(1)
    degenerate = n < 2
    if degenerate:
        l_p = l_s = 0.0
        dval = None
    else:
        norm = 1.0 / n if weights.photometric_mean else 1.0
        l_p = float(abs_res.sum()) * norm
        x = prev_planes[s.index[idx]] @ lum
        y = s.values[idx] @ lum
        sim, dsim = _ssim_and_grad(x, y, weights.c1, weights.c2, want_grad)
        l_s = (1.0 - sim) / 2.0
        if want_grad:
            dval = weights.lambda_p * norm * np.sign(res) / C
            dval += (weights.lambda_s * -0.5 * dsim)[:, None] * lum[None, :]

    total = weights.combine(l_d, l_p, l_s)
    bd = LossBreakdown(l_d, l_p, l_s, total, int(cand.sum()), gated_count, n, degenerate)
    if not want_grad:
        return bd, None, None
    used = np.zeros(K.height * K.width, dtype=bool)
    used[s.index[idx]] = True
    used = used.reshape(K.height, K.width)

    grad = np.zeros(12)
    grad[:6] = weights.lambda_d * _pose_loss_grad(pose_prev, pair.gt_prev, weights.beta)
    grad[6:] = weights.lambda_d * _pose_loss_grad(pose_curr, pair.gt_curr, weights.beta)
    if dval is not None:
        g_uv = np.einsum("nc,nck->nk", dval, s.grads[idx])
        P = s.points_curr[idx]
        zinv = 1.0 / P[:, 2]
        gu = g_uv[:, 0] * K.fx * zinv
        gv = g_uv[:, 1] * K.fy * zinv
        gP = np.column_stack([gu, gv, -(gu * P[:, 0] + gv * P[:, 1]) * zinv])
        R_rel = T_rel.rotation
        back = gP @ R_rel  # rows are R_rel^T gP
        grad[0:3] += -back.sum(axis=0)
        grad[3:6] += np.cross(back, s.points_prev[idx] - T1.translation).sum(axis=0)
        if mode == SELF_SUPERVISED:
            grad[6:9] += gP.sum(axis=0)
            grad[9:12] += np.cross(P - T2.translation, gP).sum(axis=0)
    return bd, grad, used


def total_loss(pair: FramePair, weights: LossWeights = LossWeights(), mode: str = SELF_SUPERVISED,
               pose_prev: Pose | None = None, pose_curr: Pose | None = None,
               selection: np.ndarray | None = None) -> LossBreakdown:
    """Evaluate the composite loss for predicted poses (ground truth by default).

    In ``anchored`` mode the warp uses the ground-truth current pose; in
    ``self_supervised`` mode both warp poses are the predictions. The pose
    term always compares both predictions with ground truth.

    ``selection`` (bool, previous-grid shape) replaces the flow gate and
    outlier rejection with a fixed pixel set; validity still applies.
    """
    return _evaluate(pair, weights, mode, pose_prev, pose_curr, selection, False)[0]


def total_loss_gradient(pair: FramePair, weights: LossWeights = LossWeights(), mode: str = SELF_SUPERVISED,
                        pose_prev: Pose | None = None, pose_curr: Pose | None = None,
                        selection: np.ndarray | None = None):
    """Composite loss and its gradient over the local 12-vector.

    Returns ``(LossBreakdown, gradient)``. The norm terms use the zero
    subgradient at exact agreement and the L1 term uses ``sign(0) = 0``.
    """
    return _evaluate(pair, weights, mode, pose_prev, pose_curr, selection, True)[:2]


def _loss_gradient_and_selection(pair, weights, mode, pose_prev, pose_curr):
    """Live evaluation that also returns the pixel set it used."""
    return _evaluate(pair, weights, mode, pose_prev, pose_curr, None, True)


def selection_mask(pair: FramePair, weights: LossWeights = LossWeights(), mode: str = SELF_SUPERVISED,
                   pose_prev: Pose | None = None, pose_curr: Pose | None = None,
                   grid_margin: float = 0.0, residual_margin: float = 0.0) -> np.ndarray:
    """Pixels used by the loss at the given poses, as a previous-grid mask.

    ``grid_margin`` additionally drops samples closer than that many pixels
    to an integer grid line (where the bilinear surface has a crease) and
    ``residual_margin`` drops pixels whose absolute residual is below it
    (the L1 kink). Freezing this mask makes the loss smooth for gradient
    checks.
    """
    pose_prev = pair.gt_prev if pose_prev is None else pose_prev
    pose_curr = pair.gt_curr if pose_curr is None else pose_curr
    wp, wc = _warp_poses(pair, pose_prev, pose_curr, mode)
    T_rel = relative_transform(pose_to_transform(wp), pose_to_transform(wc))
    I_prev, I_curr = _comparison_images(pair, weights)
    ext = None if pair.ext_mask is None else pair.ext_mask.keep
    s = warp_samples(I_curr, pair.depth_prev, T_rel, pair.intrinsics, ext)
    C = I_curr.channels
    res = s.values - I_prev.planes().reshape(-1, C)[s.index]
    abs_res = np.abs(res).mean(axis=1)
    ok = s.inside & (s.flow_l1 <= weights.h)
    if weights.outlier_percentile is not None and ok.any():
        ok &= abs_res <= np.percentile(abs_res[ok], 100.0 - weights.outlier_percentile)
    if grid_margin > 0:
        fu = np.abs(s.u - np.rint(s.u))
        fv = np.abs(s.v - np.rint(s.v))
        ok &= (fu >= grid_margin) & (fv >= grid_margin)
    if residual_margin > 0:
        ok &= np.abs(res).min(axis=1) >= residual_margin
    out = np.zeros(pair.intrinsics.height * pair.intrinsics.width, dtype=bool)
    out[s.index[ok]] = True
    return out.reshape(pair.intrinsics.height, pair.intrinsics.width)
