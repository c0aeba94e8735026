import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geowarp.geometry import Intrinsics, Pose
from geowarp.synth import SyntheticScene, default_intrinsics, make_pair

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def K320():
    return Intrinsics(100.0, 100.0, 160.0, 120.0, 320, 240)


@pytest.fixture
def small_K():
    return default_intrinsics(64, 48, 50.0)


def random_pose(rng, max_t=1.0):
    q = rng.normal(size=4)
    return Pose(rng.uniform(-max_t, max_t, 3), q)


def fronto_parallel_scene(K, distance=2.0, seed=0):
    """Textured plane ``z = distance`` facing the identity camera."""
    rng = np.random.default_rng(seed)
    amps = np.full(4, 0.1)
    ang = rng.uniform(0, 2 * np.pi, 4)
    wl = rng.uniform(20, 40, 4) * distance / K.fx
    freqs = np.column_stack([np.cos(ang), np.sin(ang)]) / wl[:, None]
    return SyntheticScene([0, 0, 1], distance, amps, freqs, rng.uniform(0, 2 * np.pi, 4), K)


def translated_pair(K, tx, distance=2.0, seed=0):
    """Pair whose current camera moved by ``tx`` metres along +x."""
    scene = fronto_parallel_scene(K, distance, seed)
    # world-to-camera translation is minus the camera centre
    return make_pair(scene, Pose.identity(), Pose([-tx, 0, 0], [1, 0, 0, 0]))


def gradient_case(seed, mode="self_supervised", weights=None, intrinsics=None):
    """Analytic and finite-difference gradients at a seeded perturbed configuration.

    The pixel set is frozen at the evaluation point, keeping samples at
    least 1e-2 px from grid lines and residuals away from the L1 kink.
    """
    from geowarp.align import fd_gradient, perturb_pose, random_perturbation
    from geowarp.loss import LossWeights, selection_mask, total_loss_gradient
    from geowarp.synth import random_pair

    weights = weights or LossWeights()
    pair = random_pair(seed, intrinsics)
    rng = np.random.default_rng([seed, 2])
    pp = perturb_pose(pair.gt_prev, random_perturbation(rng, 0.02, np.radians(1.0)))
    pc = perturb_pose(pair.gt_curr, random_perturbation(rng, 0.02, np.radians(1.0)))
    sel = selection_mask(pair, weights, mode, pp, pc, grid_margin=1e-2, residual_margin=1e-3)
    _, analytic = total_loss_gradient(pair, weights, mode, pp, pc, selection=sel)
    numeric = fd_gradient(pair, weights, mode, 1e-5, pp, pc, selection=sel)
    return analytic, numeric


def relative_errors(a, b, floor=1e-9):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
