"""Joint two-pose refinement on the composite loss and its finite-difference oracle."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .frames import FramePair
from .geometry import Pose, quat_multiply, so3_exp
from .loss import ANCHORED, MODES, SELF_SUPERVISED, LossBreakdown, LossWeights, _loss_gradient_and_selection, total_loss

__all__ = [
    "AlignConfig",
    "AlignReport",
    "perturb_pose",
    "random_perturbation",
    "fd_gradient",
    "refine_poses",
]

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 30


def perturb_pose(p: Pose, delta) -> Pose:
    """Left-apply a local increment ``(dx, dy, dz, rx, ry, rz)``.

    The rotation part is a rotation vector in radians composed on the left
    of the orientation; the translation part is added to the position.
    """
    delta = np.asarray(delta, dtype=float).reshape(6)
    q = quat_multiply(so3_exp(delta[3:]), p.orientation)
    return Pose(p.position + delta[:3], q)


def random_perturbation(rng: np.random.Generator, max_translation: float, max_rotation: float) -> np.ndarray:
    """Increment with uniform magnitudes in ``[0, max]`` along random directions.

    ``max_rotation`` is in radians.
    """
    def direction():
        d = rng.normal(size=3)
        return d / np.linalg.norm(d)

    t = direction() * rng.uniform(0.0, max_translation)
    r = direction() * rng.uniform(0.0, max_rotation)
    return np.concatenate([t, r])


def _apply(pose_prev: Pose, pose_curr: Pose, step: np.ndarray):
    return perturb_pose(pose_prev, step[:6]), perturb_pose(pose_curr, step[6:])


def fd_gradient(pair: FramePair, weights: LossWeights = LossWeights(), mode: str = SELF_SUPERVISED,
                step: float = 1e-5, pose_prev: Pose | None = None, pose_curr: Pose | None = None,
                selection: np.ndarray | None = None) -> np.ndarray:
    """Central finite differences of the total loss over the local 12-vector."""
    pose_prev = pair.gt_prev if pose_prev is None else pose_prev
    pose_curr = pair.gt_curr if pose_curr is None else pose_curr
    grad = np.zeros(12)
    for k in range(12):
        e = np.zeros(12)
        e[k] = step
        fp = total_loss(pair, weights, mode, *_apply(pose_prev, pose_curr, e), selection=selection).total
        fm = total_loss(pair, weights, mode, *_apply(pose_prev, pose_curr, -e), selection=selection).total
        grad[k] = (fp - fm) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class AlignConfig:
    """Optimizer settings.

    ``loss_tol`` stops the run once the relative loss decrease stays below
    it for ``patience`` consecutive iterations.
    """

    max_iterations: int = 200
    initial_step: float = 1e-2
    step_shrink: float = 0.5
    convergence_tol: float = 1e-7
    mode: str = SELF_SUPERVISED
    loss_tol: float = 1e-8
    patience: int = 3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.loss_tol < 0 or self.patience < 1:
            raise ValueError("loss_tol must be >= 0 and patience >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AlignConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class AlignReport:
    """Outcome of :func:`refine_poses`.

    ``trajectory`` holds the total loss at every iterate, each evaluated
    with the admission set (validity, flow gate) of that iterate. It
    decreases strictly except where a step had to admit new pixels whose
    residuals outweigh the gain (see :func:`refine_poses`). ``steps`` holds,
    for every accepted step, the loss before and after it on the admission
    set frozen for that iteration; ``after < before`` always.

    ``termination`` is one of ``gradient_tol``, ``no_descent`` (no trial
    step lowers the loss: a numerically stationary point of the non-smooth
    objective), ``stalled`` (relative decrease below ``loss_tol`` for
    ``patience`` iterations), ``max_iterations`` or ``degenerate`` (fewer
    than two usable pixels).
    """

    converged: bool
    iterations: int
    final_loss: LossBreakdown
    pose_prev: Pose
    pose_curr: Pose
    trajectory: list[float] = field(default_factory=list)
    steps: list[tuple[float, float]] = field(default_factory=list)
    termination: str = ""
    gradient_norm: float = math.nan
    n_params: int = 12
    mode: str = SELF_SUPERVISED


def refine_poses(pair: FramePair, weights: LossWeights = LossWeights(), cfg: AlignConfig = AlignConfig(),
                 init_prev: Pose | None = None, init_curr: Pose | None = None) -> AlignReport:
    """Jointly refine both frame poses by quasi-Newton descent on the total loss.

    Each iteration fixes the admission set (valid pixels within the flow
    gate) at the current poses, then searches along a BFGS direction built
    from gradients only; backtracking by ``step_shrink`` continues until the
    Armijo condition holds on that set, so pixels drifting across the gate
    or the image border cannot be exploited. Among such steps the first
    whose loss, re-evaluated with the admission set of the trial poses, is
    also lower is taken. When none is (far from the optimum, moving closer
    admits pixels with large residuals and the raw-sum loss jumps up), the
    longest Armijo step is taken anyway. The first step, and any retry
    after the BFGS direction fails, follows steepest descent scaled to
    length ``initial_step``. In ``anchored`` mode only the previous pose moves.
    """
    pose_prev = pair.gt_prev if init_prev is None else init_prev
    pose_curr = pair.gt_curr if init_curr is None else init_curr
    active = np.arange(6) if cfg.mode == ANCHORED else np.arange(12)
    n = active.size

    def evaluate(pp, pc):
        bd, g, sel = _loss_gradient_and_selection(pair, weights, cfg.mode, pp, pc)
        return bd, g[active], sel

    def advance(pp, pc, step):
        full = np.zeros(12)
        full[active] = step
        return _apply(pp, pc, full)

    bd, g, sel = evaluate(pose_prev, pose_curr)
    trajectory = [bd.total]
    steps = []
    extra = dict(n_params=n, mode=cfg.mode)
    if bd.degenerate:
        return AlignReport(False, 0, bd, pose_prev, pose_curr, trajectory, steps, "degenerate",
                           float(np.linalg.norm(g)), **extra)

    Hinv = None
    termination = "max_iterations"
    slow = 0
    for _ in range(cfg.max_iterations):
        gnorm = float(np.linalg.norm(g))
        if gnorm < cfg.convergence_tol:
            termination = "gradient_tol"
            break

        accepted = None
        for use_bfgs in (True, False):
            if use_bfgs:
                if Hinv is None:
                    continue
                d = -Hinv @ g
                if g @ d >= 0:
                    continue
            else:
                Hinv = None
                d = -g * (cfg.initial_step / gnorm)
            slope = float(g @ d)
            t = 1.0
            fallback = None
            for _ in range(MAX_BACKTRACKS):
                cand = advance(pose_prev, pose_curr, t * d)
                f = total_loss(pair, weights, cfg.mode, *cand, selection=sel)
                if not f.degenerate and f.total < bd.total and f.total <= bd.total + ARMIJO_C * t * slope:
                    live = evaluate(*cand)
                    if live[0].degenerate:
                        pass
                    elif live[0].total < bd.total:
                        accepted = (t * d, cand, f.total, live)
                        break
                    elif fallback is None:
                        fallback = (t * d, cand, f.total, live)
                t *= cfg.step_shrink
            if accepted is None and fallback is not None:
                # Every sufficient step admits pixels whose residuals outweigh the
                # decrease; take the longest one anyway, the frozen set still drops.
                accepted = fallback
            if accepted is not None:
                break

        if accepted is None:
            termination = "no_descent"
            break

        s, (pose_prev, pose_curr), f_frozen, (new_bd, g_new, sel) = accepted
        steps.append((bd.total, f_frozen))
        decrease = bd.total - new_bd.total
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if Hinv is None:
                Hinv = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        bd, g = new_bd, g_new
        trajectory.append(bd.total)
        slow = slow + 1 if decrease <= cfg.loss_tol * max(1.0, abs(bd.total)) else 0
        if slow >= cfg.patience:
            termination = "stalled"
            break
    else:
        if np.linalg.norm(g) < cfg.convergence_tol:
            termination = "gradient_tol"

    converged = termination in ("gradient_tol", "no_descent", "stalled")
    return AlignReport(converged, len(steps), bd, pose_prev, pose_curr, trajectory, steps, termination,
                       float(np.linalg.norm(g)), **extra)
