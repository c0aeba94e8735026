"""Compare the analytic loss gradient with central finite differences.

Run: python3 demos/gradient_check_demo.py
"""

import numpy as np

from geowarp import LossWeights, fd_gradient, perturb_pose, random_pair, selection_mask, total_loss_gradient
from geowarp.align import random_perturbation


def main():
    w = LossWeights()
    names = [f"{p}.{c}" for p in ("prev", "curr") for c in ("tx", "ty", "tz", "rx", "ry", "rz")]
    for seed in range(3):
        pair = random_pair(seed)
        rng = np.random.default_rng([seed, 2])
        pp = perturb_pose(pair.gt_prev, random_perturbation(rng, 0.02, np.radians(1)))
        pc = perturb_pose(pair.gt_curr, random_perturbation(rng, 0.02, np.radians(1)))
        # Freeze which pixels count, keeping only samples away from grid lines,
        # so finite differences see a smooth function
        sel = selection_mask(pair, w, "self_supervised", pp, pc, grid_margin=1e-2, residual_margin=1e-3)
        _, analytic = total_loss_gradient(pair, w, "self_supervised", pp, pc, selection=sel)
        numeric = fd_gradient(pair, w, "self_supervised", 1e-5, pp, pc, selection=sel)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-9)
        k = int(rel.argmax())
        print(f"seed {seed}: {sel.sum()} pixels, worst relative error {rel[k]:.2e} on {names[k]}")
        for name, a, n in zip(names[:3], analytic, numeric):
            print(f"    {name}: analytic {a:+.6f}  numeric {n:+.6f}")


if __name__ == "__main__":
    main()
