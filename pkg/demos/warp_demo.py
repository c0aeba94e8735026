"""Warp the current frame onto the previous frame's grid and inspect the flow.

Run: python3 demos/warp_demo.py
"""

import numpy as np

from geowarp import Pose, SyntheticScene, make_pair, pose_to_transform, relative_transform, warp_image


def main():
    scene = SyntheticScene.random(seed=3)
    prev = Pose.identity()
    curr = Pose([-0.04, 0.01, 0.0], [1, 0, 0, 0])  # camera moved 4 cm right, 1 cm up
    pair = make_pair(scene, prev, curr)

    T = relative_transform(pose_to_transform(prev), pose_to_transform(curr))
    result = warp_image(pair.image_curr, pair.depth_prev, T, pair.intrinsics)
    keep = result.validity.keep
    print(f"valid pixels: {keep.sum()} of {keep.size}")
    print(f"L1 flow (px): min {result.flow_l1[keep].min():.3f}, max {result.flow_l1[keep].max():.3f}")

    # Under brightness constancy the warped image reproduces the previous frame
    err = np.abs(result.warped.data - pair.image_prev.data)[keep]
    print(f"|warped - I_prev| on valid pixels: mean {err.mean():.2e}, max {err.max():.2e}")
    print("the residual is bilinear interpolation error only; it shrinks as texture gets smoother")

    same = warp_image(pair.image_prev, pair.depth_prev, relative_transform(pose_to_transform(prev),
                      pose_to_transform(prev)), pair.intrinsics)
    print(f"identity motion: max flow {same.flow_l1.max()}, "
          f"max |warped - I| {np.abs(same.warped.data - pair.image_prev.data)[same.validity.keep].max()}")


if __name__ == "__main__":
    main()
