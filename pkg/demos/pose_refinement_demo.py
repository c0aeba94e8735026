"""Recover both camera poses of a pair from a perturbed start.

Run: python3 demos/pose_refinement_demo.py
"""

import numpy as np

from geowarp import AlignConfig, LossWeights, perturb_pose, random_pair, refine_poses, rotation_angle_deg
from geowarp.align import random_perturbation


def errors(pose, gt):
    return np.linalg.norm(pose.position - gt.position) * 1000, rotation_angle_deg(pose.orientation, gt.orientation)


def main():
    pair = random_pair(seed=21)
    rng = np.random.default_rng(5)
    init_prev = perturb_pose(pair.gt_prev, random_perturbation(rng, 0.05, np.radians(2)))
    init_curr = perturb_pose(pair.gt_curr, random_perturbation(rng, 0.05, np.radians(2)))
    print("start: prev off by {:.1f} mm / {:.2f} deg, curr off by {:.1f} mm / {:.2f} deg".format(
        *errors(init_prev, pair.gt_prev), *errors(init_curr, pair.gt_curr)))

    for mode in ("self_supervised", "anchored"):
        # anchored mode trusts the current pose, so it starts (and stays) at ground truth
        curr = init_curr if mode == "self_supervised" else pair.gt_curr
        rep = refine_poses(pair, LossWeights(), AlignConfig(mode=mode), init_prev, curr)
        print(f"\n{mode}: {rep.termination} after {rep.iterations} iterations, {rep.n_params} parameters")
        print("  loss: " + " -> ".join(f"{v:.4g}" for v in rep.trajectory[:: max(1, len(rep.trajectory) // 6)]))
        print("  prev error {:.4f} mm / {:.5f} deg".format(*errors(rep.pose_prev, pair.gt_prev)))
        print("  curr error {:.4f} mm / {:.5f} deg".format(*errors(rep.pose_curr, pair.gt_curr)))


if __name__ == "__main__":
    main()
