"""Pose recovery as more and more depth pixels are removed.

Run: python3 demos/depth_sparsity_demo.py
"""

import numpy as np

from geowarp import FramePair, LossWeights, perturb_pose, random_pair, refine_poses, rotation_angle_deg, sparsify_depth
from geowarp.align import random_perturbation

SEEDS = range(8)


def trial(seed, remove):
    pair = random_pair(seed)
    depth = sparsify_depth(pair.depth_prev, remove, seed=[seed, 4])
    pair = FramePair(pair.image_prev, pair.image_curr, depth, pair.gt_prev, pair.gt_curr, pair.intrinsics)
    rng = np.random.default_rng([seed, 3])
    pp = perturb_pose(pair.gt_prev, random_perturbation(rng, 0.05, np.radians(2)))
    pc = perturb_pose(pair.gt_curr, random_perturbation(rng, 0.05, np.radians(2)))
    rep = refine_poses(pair, LossWeights(), init_prev=pp, init_curr=pc)
    t = max(np.linalg.norm(rep.pose_prev.position - pair.gt_prev.position),
            np.linalg.norm(rep.pose_curr.position - pair.gt_curr.position))
    r = max(rotation_angle_deg(rep.pose_prev.orientation, pair.gt_prev.orientation),
            rotation_angle_deg(rep.pose_curr.orientation, pair.gt_curr.orientation))
    return t * 1000, r


def main():
    print("removed  median error (mm)  median error (deg)")
    for remove in (0.0, 0.4, 0.8, 0.95):
        res = np.array([trial(s, remove) for s in SEEDS])
        print(f"{remove:6.0%}  {np.median(res[:, 0]):17.5f}  {np.median(res[:, 1]):18.6f}")
    print("\nwith exact synthetic depth, fewer pixels means a smaller raw-sum photometric term;")
    print("the pose term, anchored at ground truth, then dominates and errors shrink rather than grow")


if __name__ == "__main__":
    main()
