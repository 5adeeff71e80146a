"""Statistical baseline policies: greedy MAP and infomax.

Neither objective says when to stop, so both run under a belief
threshold. In the simple task the threshold applies to the fixated
location (the only one that may be declared); in the peripheral task it
applies to the most likely location.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError
from .observation import TaskModel
from .simplex import SimplexGrid, check_belief
from .solver import CostParams, check_solvable, dynamics_for
from .trials import DEFAULT_CAP, TrialRecord, run_batch, run_trial

log = logging.getLogger(__name__)

GREEDY_TIE_EPS = 1e-9
INFOMAX_TIE_EPS = 1e-10
DEFAULT_HORIZON = 20


def entropy(p) -> float:
    p = check_belief(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def greedy_map_q(model: TaskModel, p, j: int) -> float:
    """Negated expected maximum posterior after one observation at ``j``."""
    p = check_belief(p)
    pred = model.predictive(p, j)
    total = 0.0
    for x, px in enumerate(pred):
        if px > 0.0:
            total += px * model.bayes_update(p, j, x).max()
    return -total


def greedy_map_qs(model: TaskModel, beliefs: np.ndarray) -> np.ndarray:
    """Vectorized greedy-MAP Q-factors, shape ``(m, A)``.

    Uses ``P(x) * max_i post_i = max_i p_i L(x | i, j)``.
    """
    joint = beliefs[:, None, :, None] * model.table[None]  # (m, a, s, x)
    return -joint.max(axis=2).sum(axis=2)


def _pick_tied(near: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Uniformly choose one True entry per row using uniforms ``u``."""
    count = near.sum(axis=1)
    rank = np.minimum((u * count).astype(np.int64), count - 1)
    cum = np.cumsum(near, axis=1)
    return np.argmax(near & (cum == rank[:, None] + 1), axis=1)


def greedy_map_action(model: TaskModel, p, rng: np.random.Generator) -> int:
    q = np.array([greedy_map_q(model, p, j) for j in range(model.n_actions)])
    near = np.flatnonzero(q <= q.min() + GREEDY_TIE_EPS)
    if near.size == 1:
        return int(near[0])
    return int(near[rng.integers(near.size)])


@dataclass(frozen=True, eq=False)
class InfomaxTable:
    """Backward-induction solution of the cumulative expected entropy objective.

    ``actions[t, cell]`` is the lowest-index minimizer at step ``t``;
    ``near0`` marks every action tied for the minimum at ``t = 0``, the
    slice that is executed as a stationary policy.
    """

    grid: SimplexGrid
    horizon: int
    actions: np.ndarray
    q0: np.ndarray
    near0: np.ndarray

    def choose(self, cells: np.ndarray, fixations: np.ndarray) -> np.ndarray:
        near = self.near0[cells]
        stay = near[np.arange(len(cells)), fixations]
        return np.where(stay, fixations, np.argmax(near, axis=1))


def infomax_solve(model: TaskModel, grid: SimplexGrid,
                  horizon: int = DEFAULT_HORIZON) -> InfomaxTable:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    check_solvable(model)
    dyn = dynamics_for(model, grid)
    w = np.zeros(grid.size)
    actions = np.empty((horizon, grid.size), dtype=np.int8)
    q = None
    for t in range(horizon - 1, -1, -1):
        q = dyn.expected_entropy + np.column_stack([op @ w for op in dyn.operators])
        if not np.all(np.isfinite(q)):
            raise FloatingPointError("non-finite expected entropy")
        w = q.min(axis=1)
        actions[t] = np.argmax(q <= w[:, None] + INFOMAX_TIE_EPS, axis=1)
    near0 = q <= q.min(axis=1, keepdims=True) + INFOMAX_TIE_EPS
    return InfomaxTable(grid, horizon, actions, q, near0)


def threshold_stop(model: TaskModel, beliefs: np.ndarray, fixations: np.ndarray,
                   threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Stop mask and declarations for the belief-threshold rule."""
    if model.declares_fixated:
        conf = beliefs[np.arange(len(beliefs)), fixations]
        return conf >= threshold, np.asarray(fixations)
    return beliefs.max(axis=1) >= threshold, np.argmax(beliefs, axis=1)


def _check_threshold(model: TaskModel, threshold: float) -> None:
    if not 1.0 / model.k < threshold < 1.0:
        raise ValueError(f"threshold must lie in (1/k, 1), got {threshold!r}")


class InfomaxRunner:
    def __init__(self, model: TaskModel, table: InfomaxTable, threshold: float):
        _check_threshold(model, threshold)
        self.model, self.table, self.threshold = model, table, threshold

    def act(self, beliefs, fixations, u):
        stop, decl = threshold_stop(self.model, beliefs, fixations, self.threshold)
        move = self.table.choose(self.table.grid.nearest(beliefs), fixations)
        return np.where(stop, decl, self.model.k + move)


class GreedyMapRunner:
    def __init__(self, model: TaskModel, threshold: float):
        _check_threshold(model, threshold)
        self.model, self.threshold = model, threshold

    def act(self, beliefs, fixations, u):
        stop, decl = threshold_stop(self.model, beliefs, fixations, self.threshold)
        q = greedy_map_qs(self.model, beliefs)
        move = _pick_tied(q <= q.min(axis=1, keepdims=True) + GREEDY_TIE_EPS, u)
        return np.where(stop, decl, self.model.k + move)


def threshold_runner(model: TaskModel, rule: str, threshold: float,
                     table: InfomaxTable | None = None):
    if rule == "infomax":
        if table is None:
            raise ValueError("infomax rule needs a solved InfomaxTable")
        return InfomaxRunner(model, table, threshold)
    if rule == "greedy-map":
        return GreedyMapRunner(model, threshold)
    raise ValueError(f"unknown continuation rule {rule!r}")


def threshold_policy_codes(model: TaskModel, table: InfomaxTable, threshold: float,
                           fixation: int) -> np.ndarray:
    """Infomax-plus-threshold action code at every cell, for policy maps."""
    runner = InfomaxRunner(model, table, threshold)
    pts = table.grid.points
    fix = np.full(len(pts), fixation)
    return runner.act(pts, fix, np.zeros(len(pts)))


def run_threshold_policy(runner, model: TaskModel, costs: CostParams, target: int,
                         seed: int, initial_fixation: int, prior=None,
                         cap: int = DEFAULT_CAP,
                         generative: TaskModel | None = None) -> TrialRecord:
    return run_trial(runner, model, costs, target, seed, initial_fixation, prior, cap,
                     generative)


@dataclass(frozen=True)
class Calibration:
    threshold: float
    accuracy: float
    matched: bool
    evaluations: tuple[tuple[float, float], ...]


def calibrate_threshold(model: TaskModel, make_runner, target_accuracy: float,
                        n_trials: int, seed: int, initial_fixation: int,
                        costs: CostParams | None = None, prior=None,
                        cap: int = DEFAULT_CAP, steps: int = 20) -> Calibration:
    """Bisection for the largest threshold whose accuracy does not overshoot.

    ``make_runner(theta)`` builds the policy for a threshold. Every
    evaluation replays the same trials (common random numbers). Returns
    the largest tested threshold with accuracy at most
    ``target_accuracy + 0.005``. If every tested threshold overshoots (the
    target sits below what any threshold policy achieves) the lowest
    threshold is returned with ``matched=False``.
    """
    if n_trials < 1000:
        raise ValueError("calibration needs at least 1000 trials")
    if not 0.0 < target_accuracy < 1.0:
        raise CalibrationError(
            f"target accuracy {target_accuracy!r} is unreachable; need (0, 1)")
    costs = costs or CostParams(1.0)
    lo, hi = 1.0 / model.k + 1e-3, 1.0 - 1e-3

    def accuracy(theta):
        batch = run_batch(make_runner(theta), model, costs, n_trials, seed,
                          initial_fixation, prior, cap)
        return batch.stats().accuracy

    tested = [(hi, accuracy(hi))]
    if tested[0][1] < target_accuracy - 0.05:
        raise CalibrationError(
            f"even threshold {hi} reaches only accuracy {tested[0][1]:.4f}")
    tested.append((lo, accuracy(lo)))
    a, b = lo, hi
    for _ in range(steps):
        mid = 0.5 * (a + b)
        acc = accuracy(mid)
        tested.append((mid, acc))
        if acc <= target_accuracy:
            a = mid
        else:
            b = mid
    ok = [(t, acc) for t, acc in tested if acc <= target_accuracy + 0.005]
    if not ok:
        log.warning("every threshold overshoots target accuracy %.4f", target_accuracy)
        theta, acc = min(tested)
        return Calibration(theta, acc, False, tuple(tested))
    theta, acc = max(ok)
    log.debug("calibrated threshold %.6f (accuracy %.4f, target %.4f)",
              theta, acc, target_accuracy)
    return Calibration(theta, acc, True, tuple(tested))
