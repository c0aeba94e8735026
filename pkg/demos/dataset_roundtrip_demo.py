"""Write a synthetic RGB-D sequence to disk, read it back and preprocess it.

Run: python3 demos/dataset_roundtrip_demo.py
"""

import tempfile

import numpy as np

from geowarp import (FrameRecord, SyntheticScene, load_sequence, pair_frames, range_filter, render_view,
                     resize_frame, rotation_angle_deg, sequence_poses, write_sequence)
from geowarp.synth import default_intrinsics


def main():
    K = default_intrinsics(160, 120)
    scene = SyntheticScene.random(seed=2, intrinsics=K)
    frames = []
    for i, pose in enumerate(sequence_poses(4)):
        image, depth = render_view(scene, pose)
        frames.append(FrameRecord(image, depth, pose, frame_id=i))

    with tempfile.TemporaryDirectory() as d:
        write_sequence(d, frames, K)  # 8-bit color, 16-bit millimetre depth, camera-to-world 4x4 poses
        loaded, K_read = load_sequence(d)

    for a, b in zip(frames, loaded):
        print(f"frame {a.frame_id}: max image diff {np.abs(a.image.data - b.image.data).max():.4f} "
              f"(8-bit), max depth diff {np.abs(a.depth.depth - b.depth.depth).max() * 1000:.2f} mm, "
              f"pose {np.linalg.norm(a.pose_gt.position - b.pose_gt.position):.1e} m / "
              f"{rotation_angle_deg(a.pose_gt.orientation, b.pose_gt.orientation):.1e} deg")

    small, K_small = resize_frame(loaded[0], K_read, 80, 60)
    print(f"\nresized to {small.image.width}x{small.image.height}: fx {K_read.fx} -> {K_small.fx}, "
          f"cx {K_read.cx} -> {K_small.cx}")
    near = range_filter(loaded[0].depth, 2.0)
    print(f"depth < 2 m keeps {near.valid_count} of {loaded[0].depth.valid_count} pixels")
    pairs = pair_frames(loaded, K_read)
    print(f"{len(pairs)} consecutive pairs: {[p.frame_ids for p in pairs]}")


if __name__ == "__main__":
    main()
