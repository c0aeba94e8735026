"""Depth-driven image warping and a geometry-aware pose loss for camera localization."""

from .align import AlignConfig, AlignReport, fd_gradient, perturb_pose, random_perturbation, refine_poses
from .dataset import (DatasetError, FrameRecord, InvalidPoseError, load_frame, load_sequence, pair_frames,
                      range_filter, resize_frame, save_frame, sparsify_depth, write_sequence)
from .frames import FramePair
from .geometry import (GeometryError, Intrinsics, Pose, RigidTransform, backproject, compose, pose_to_transform,
                       project, relative_transform, rotation_angle_deg, transform_inverse, transform_to_pose)
from .imaging import DepthMap, ImageBuffer, ImagingError, PixelMask, SSIMStats, bilinear_sample, image_stats, mask_and
from .loss import (ANCHORED, SELF_SUPERVISED, LossBreakdown, LossWeights, euclidean_pose_loss, photometric_loss,
                   selection_mask, ssim, ssim_loss, total_loss, total_loss_gradient)
from .report import ErrorTable, emit_report, lower_median, parse_report, pose_errors
from .synth import SyntheticScene, default_intrinsics, make_pair, random_pair, render_view, sequence_poses
from .warp import WarpResult, warp_image, warp_pixel

__version__ = "0.1.0"
