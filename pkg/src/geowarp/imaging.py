"""Image, depth and mask buffers plus the differentiable bilinear sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "ImagingError",
    "ImageBuffer",
    "DepthMap",
    "PixelMask",
    "SSIMStats",
    "Sample",
    "LUMA_WEIGHTS",
    "to_grayscale",
    "bilinear_sample",
    "sample_bilinear",
    "snap_to_grid",
    "mask_and",
    "image_stats",
]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Sample coordinates this close to a grid line are snapped onto it, so an
# identity warp reads stored pixels back exactly despite round-off.
_SNAP_TOL = 1e-9


class ImagingError(ValueError):
    """Invalid buffer contents, mismatched shapes or degenerate statistics."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Intensity image with values in [0, 1].

    ``data`` has shape ``(height, width)`` for one channel or
    ``(height, width, 3)`` for RGB.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=float)
        if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] not in (1, 3)):
            raise ImagingError(f"unsupported image shape {a.shape}")
        if a.ndim == 3 and a.shape[2] == 1:
            a = a[:, :, 0]
        if not np.all(np.isfinite(a)):
            raise ImagingError("image contains non-finite values")
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ImagingError("intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def planes(self) -> np.ndarray:
        """Data viewed as ``(height, width, channels)``."""
        return self.data if self.data.ndim == 3 else self.data[:, :, None]


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth with a per-pixel validity flag.

    Invalid pixels are stored as depth 0 so the array stays finite.
    """

    depth: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        d = np.array(self.depth, dtype=float)
        if d.ndim != 2:
            raise ImagingError(f"depth map must be 2-D, got shape {d.shape}")
        ok = np.isfinite(d) & (d > 0)
        if self.valid is not None:
            v = np.array(self.valid, dtype=bool)
            if v.shape != d.shape:
                raise ImagingError("validity shape does not match depth shape")
            ok &= v
        d = np.where(ok, d, 0.0)
        object.__setattr__(self, "depth", _frozen(d))
        object.__setattr__(self, "valid", _frozen(ok))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Boolean keep-mask over an image grid."""

    keep: np.ndarray

    def __post_init__(self):
        k = np.array(self.keep, dtype=bool)
        if k.ndim != 2:
            raise ImagingError("mask must be 2-D")
        object.__setattr__(self, "keep", _frozen(k))

    @classmethod
    def full(cls, height: int, width: int, value: bool = True) -> "PixelMask":
        return cls(np.full((height, width), value, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def count(self) -> int:
        return int(self.keep.sum())


@dataclass(frozen=True)
class SSIMStats:
    """Population moments of two images over a pixel selection."""

    mu_x: float
    mu_y: float
    var_x: float
    var_y: float
    cov_xy: float
    count: int


class Sample(NamedTuple):
    value: np.ndarray  # (channels,)
    gradient: np.ndarray  # (channels, 2): d value / d (u, v)
    in_bounds: bool


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Luminance ``0.299 R + 0.587 G + 0.114 B`` of an RGB image."""
    if img.channels != 3:
        raise ImagingError(f"expected 3 channels, got {img.channels}")
    gray = img.data @ LUMA_WEIGHTS
    return ImageBuffer(np.clip(gray, 0.0, 1.0))


def snap_to_grid(x: np.ndarray) -> np.ndarray:
    """Round coordinates lying within round-off of an integer onto it."""
    x = np.asarray(x, dtype=float)
    r = np.rint(x)
    return np.where(np.abs(x - r) < _SNAP_TOL, r, x)


def sample_bilinear(planes: np.ndarray, u, v):
    """Vectorized bilinear lookup on a ``(H, W, C)`` array.

    Parameters
    ----------
    planes : ndarray, shape (H, W, C)
    u, v : ndarray, shape (N,)
        Continuous column and row coordinates.

    Returns
    -------
    values : ndarray, shape (N, C)
    grads : ndarray, shape (N, C, 2)
        Analytic derivative of each value with respect to ``(u, v)``.
    inside : ndarray of bool, shape (N,)
        False where the 2x2 neighbourhood leaves the image; values and
        gradients are zero there.
    """
    H, W, C = planes.shape
    u = snap_to_grid(u)
    v = snap_to_grid(v)

    if W < 2 or H < 2:
        return np.zeros((u.size, C)), np.zeros((u.size, C, 2)), np.zeros(u.size, dtype=bool)
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uu = np.where(inside, u, 0.0)
    vv = np.where(inside, v, 0.0)
    x0 = np.minimum(uu.astype(np.intp), W - 2)  # truncation is floor for uu >= 0
    y0 = np.minimum(vv.astype(np.intp), H - 2)
    ax = (uu - x0)[:, None]
    ay = (vv - y0)[:, None]

    flat = planes.reshape(H * W, C)
    i00 = y0 * W + x0
    p00 = flat.take(i00, axis=0)
    p01 = flat.take(i00 + 1, axis=0)
    p10 = flat.take(i00 + W, axis=0)
    p11 = flat.take(i00 + W + 1, axis=0)

    dx_top = p01 - p00
    dx_bot = p11 - p10
    top = p00 + ax * dx_top
    bottom = p10 + ax * dx_bot
    dy = bottom - top
    values = top + ay * dy
    grads = np.empty(values.shape + (2,))
    grads[..., 0] = dx_top + ay * (dx_bot - dx_top)
    grads[..., 1] = dy

    out = ~inside
    if out.any():
        values[out] = 0.0
        grads[out] = 0.0
    return values, grads, inside


def bilinear_sample(img: ImageBuffer, u) -> Sample:
    """Sample ``img`` at the continuous pixel ``u = (column, row)``.

    Out-of-bounds lookups are reported through ``in_bounds=False`` instead
    of being clamped to the border.
    """
    col, row = np.asarray(u, dtype=float).reshape(2)
    values, grads, inside = sample_bilinear(img.planes(), np.array([col]), np.array([row]))
    return Sample(values[0], grads[0], bool(inside[0]))


def mask_and(a: PixelMask, b: PixelMask) -> PixelMask:
    if a.shape != b.shape:
        raise ImagingError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return PixelMask(a.keep & b.keep)


def _moments(x: np.ndarray, y: np.ndarray) -> SSIMStats:
    n = x.size
    if n < 2:
        raise ImagingError(f"need at least 2 pixels for statistics, got {n}")
    mx = x.mean()
    my = y.mean()
    dx = x - mx
    dy = y - my
    return SSIMStats(float(mx), float(my), float(dx @ dx / n), float(dy @ dy / n), float(dx @ dy / n), n)


def image_stats(a: ImageBuffer, b: ImageBuffer, mask: PixelMask) -> SSIMStats:
    """Means, population variances and covariance over the masked pixels."""
    if a.channels != 1 or b.channels != 1:
        raise ImagingError("image_stats expects single-channel images")
    if a.shape != b.shape or mask.shape != a.shape:
        raise ImagingError("image and mask dimensions must agree")
    sel = mask.keep
    return _moments(a.data[sel], b.data[sel])
