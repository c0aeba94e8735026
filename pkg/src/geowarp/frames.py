"""The two-frame training sample shared by the loss, align and synth modules."""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import Intrinsics, Pose
from .imaging import DepthMap, ImageBuffer, ImagingError, PixelMask

__all__ = ["FramePair"]


@dataclass(frozen=True, eq=False)
class FramePair:
    """Previous and current images, previous-frame depth and ground truth.

    Depth is only needed for the previous frame. ``ext_mask`` marks
    previous-frame pixels to keep (for example, pixels not on moving
    objects); ``None`` keeps everything.
    """

    image_prev: ImageBuffer
    image_curr: ImageBuffer
    depth_prev: DepthMap
    gt_prev: Pose
    gt_curr: Pose
    intrinsics: Intrinsics
    ext_mask: PixelMask | None = None
    frame_ids: tuple[int, int] = (0, 1)

    def __post_init__(self):
        K = self.intrinsics
        shape = (K.height, K.width)
        for name in ("image_prev", "image_curr", "depth_prev"):
            if getattr(self, name).shape != shape:
                raise ImagingError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.image_prev.channels != self.image_curr.channels:
            raise ImagingError("both images must have the same channel count")
        if self.ext_mask is not None and self.ext_mask.shape != shape:
            raise ImagingError("external mask shape mismatch")
