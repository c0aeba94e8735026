"""Break the composite loss into its pose, photometric and SSIM terms.

Run: python3 demos/loss_demo.py
"""

import numpy as np

from geowarp import LossWeights, perturb_pose, random_pair, total_loss


def show(label, bd):
    print(f"{label:<28} L_D={bd.l_d:.5f}  L_P={bd.l_p:9.3f}  L_S={bd.l_s:.5f}  total={bd.total:.5f}  "
          f"used={bd.used_pixel_count} gated={bd.gated_pixel_count}")


def main():
    pair = random_pair(seed=11)
    w = LossWeights()  # beta 3, lambda 1 / 0.01 / 0.1, h 10 px
    show("ground truth", total_loss(pair, w, "self_supervised"))

    for mm in (5, 20, 50):
        delta = np.array([mm / 1000, 0, 0, 0, 0, 0])
        show(f"prev shifted {mm} mm", total_loss(pair, w, "self_supervised", perturb_pose(pair.gt_prev, delta),
                                                   pair.gt_curr))

    # A large rotation throws most pixels past the 10 px flow gate
    big = perturb_pose(pair.gt_curr, [0, 0, 0, 0, 0.1, 0])
    show("curr rotated 5.7 deg", total_loss(pair, w, "self_supervised", pair.gt_prev, big))
    show("same, gate opened to 1000", total_loss(pair, LossWeights(h=1000.0), "self_supervised", pair.gt_prev, big))

    print("\nthe photometric term is a raw sum over pixels, so at ground truth it keeps a small")
    print("interpolation residual; averaging instead makes it negligible:")
    show("ground truth, mean L_P", total_loss(pair, LossWeights(photometric_mean=True), "self_supervised"))


if __name__ == "__main__":
    main()
