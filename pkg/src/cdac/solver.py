"""Exact C-DAC policy by value iteration on the belief grid.

The value of a (belief, current fixation) pair is the expected residual
cost: accrued time and switch costs are sunk, so stopping costs
``1 - p[declared]`` and moving to fixation ``j`` costs
``c + c_s * [j != current]`` plus the expected value after one observation
at ``j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .errors import ConvergenceError
from .observation import SimpleTaskModel, TaskModel
from .simplex import SimplexGrid, check_belief

log = logging.getLogger(__name__)

# Q-factors closer than this are treated as tied.
TIE_EPS = 1e-10
# Expectimax horizon caps, by observation alphabet size.
ORACLE_MAX_HORIZON = {2: 5, 8: 3}


@dataclass(frozen=True)
class CostParams:
    c: float
    cs: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"time cost must be positive, got {self.c!r}")
        if not self.cs >= 0:
            raise ValueError(f"switch cost must be nonnegative, got {self.cs!r}")


class Action(NamedTuple):
    stop: bool
    location: int  # declared location when stopping, else the fixation action

    def code(self, k: int) -> int:
        return self.location if self.stop else k + self.location

    @classmethod
    def from_code(cls, code: int, k: int) -> "Action":
        code = int(code)
        return cls(True, code) if code < k else cls(False, code - k)


@dataclass(frozen=True, eq=False)
class ValueTable:
    grid: SimplexGrid
    values: np.ndarray  # (cells, fixations)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Action code per (cell, fixation); codes below ``k`` stop and declare."""

    grid: SimplexGrid
    codes: np.ndarray

    @property
    def k(self) -> int:
        return self.grid.k

    def is_stop(self) -> np.ndarray:
        return self.codes < self.k

    def action(self, cell: int, fixation: int) -> Action:
        return Action.from_code(self.codes[cell, fixation], self.k)


class Solution(NamedTuple):
    values: ValueTable
    policy: PolicyTable
    sweeps: int
    max_increase: float = 0.0


def check_solvable(model: TaskModel) -> None:
    if isinstance(model, SimpleTaskModel) and model.beta1 >= 1.0:
        raise ValueError("beta1 = 1 gives zero-likelihood updates; not solvable")


def stopping_value(model: TaskModel, p, fixation: int) -> tuple[float, int]:
    """Residual cost of stopping now and the location that would be declared."""
    p = check_belief(p)
    if model.declares_fixated:
        return 1.0 - float(p[fixation]), int(fixation)
    d = int(np.argmax(p))
    return 1.0 - float(p[d]), d


class BeliefDynamics:
    """One-step belief transitions from every grid cell, as sparse operators.

    ``operators[j] @ v`` gives, for each cell, the expected interpolated
    value of ``v`` after one observation at fixation ``j``.
    """

    def __init__(self, model: TaskModel, grid: SimplexGrid):
        if grid.k != model.k:
            raise ValueError("grid and model disagree on the number of locations")
        self.model = model
        self.grid = grid
        pts = grid.points
        n = grid.size
        self.operators: list[sparse.csr_matrix] = []
        self.expected_entropy = np.empty((n, model.n_actions))
        rows = np.repeat(np.arange(n), model.n_obs * model.k)
        for a in range(model.n_actions):
            prob, post = model.posteriors(pts, a)
            idx, w = grid.locate_many(post.reshape(-1, model.k))
            data = (w.reshape(n, model.n_obs, model.k) * prob[:, :, None]).ravel()
            op = sparse.coo_matrix((data, (rows, idx.ravel())), shape=(n, n)).tocsr()
            op.eliminate_zeros()
            op.sort_indices()
            self.operators.append(op)
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(post > 0, post * np.log(post), 0.0)
            self.expected_entropy[:, a] = -(prob * plogp.sum(axis=-1)).sum(axis=1)

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Expected next-step value per (cell, next fixation); ``values`` is (cells, A)."""
        return np.column_stack(
            [op @ values[:, a] for a, op in enumerate(self.operators)]
        )


_DYNAMICS_CACHE: dict[tuple, BeliefDynamics] = {}


def dynamics_for(model: TaskModel, grid: SimplexGrid) -> BeliefDynamics:
    key = (type(model), _model_params(model), grid.k, grid.n)
    dyn = _DYNAMICS_CACHE.get(key)
    if dyn is None:
        dyn = _DYNAMICS_CACHE[key] = BeliefDynamics(model, grid)
    return dyn


def _model_params(model: TaskModel) -> tuple:
    if isinstance(model, SimpleTaskModel):
        return (model.beta1,)
    return tuple(model.betas)


def switch_matrix(n_actions: int) -> np.ndarray:
    return 1.0 - np.eye(n_actions)


def q_factors(model: TaskModel, costs: CostParams, dyn: BeliefDynamics,
              values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stopping Q ``(cells, A)`` and continuation Q ``(cells, A_now, A_next)``."""
    stop_q = model.stop_costs(dyn.grid.points)
    ev = dyn.expect(values)
    cont_q = costs.c + costs.cs * switch_matrix(model.n_actions)[None] + ev[:, None, :]
    return stop_q, cont_q


def select_actions(stop_q: np.ndarray, cont_q: np.ndarray,
                   declared: np.ndarray, k: int) -> np.ndarray:
    """Action codes with the deterministic tie-break.

    Stop wins ties with continuation; among continuations, staying put
    wins, then the lowest action index.
    """
    n, a_now, _ = cont_q.shape
    best = cont_q.min(axis=2)
    near = cont_q <= best[:, :, None] + TIE_EPS
    stay = near[:, np.arange(a_now), np.arange(a_now)]
    first = np.argmax(near, axis=2)
    move = np.where(stay, np.arange(a_now)[None, :], first)
    stop = stop_q <= best + TIE_EPS
    return np.where(stop, declared, k + move).astype(np.int16)


def optimal_action_sets(model: TaskModel, grid: SimplexGrid, stop_q: np.ndarray,
                        cont_q: np.ndarray) -> np.ndarray:
    """Boolean mask over action codes that are optimal within ``TIE_EPS``.

    Shape ``(cells, A_now, k + A)``. Used for symmetry checks, where the
    deterministic tie-break is not permutation-equivariant.
    """
    n, a_now, a_next = cont_q.shape
    k = model.k
    best = np.minimum(stop_q, cont_q.min(axis=2))
    mask = np.zeros((n, a_now, k + a_next), dtype=bool)
    stop_ok = stop_q <= best + TIE_EPS
    if model.declares_fixated:
        decl = np.broadcast_to(np.eye(k, a_now, dtype=bool).T[None], (n, a_now, k))
    else:
        pts = grid.points
        top = pts >= pts.max(axis=1, keepdims=True) - TIE_EPS
        decl = np.broadcast_to(top[:, None, :], (n, a_now, k))
    mask[:, :, :k] = decl & stop_ok[:, :, None]
    mask[:, :, k:] = cont_q <= best[:, :, None] + TIE_EPS
    return mask


def declared_locations(model: TaskModel, grid: SimplexGrid) -> np.ndarray:
    pts = grid.points
    fix = np.arange(model.n_actions)
    if model.declares_fixated:
        return np.broadcast_to(fix, (grid.size, model.n_actions)).copy()
    return np.repeat(np.argmax(pts, axis=1)[:, None], model.n_actions, axis=1)


def value_iteration(model: TaskModel, costs: CostParams, grid: SimplexGrid,
                    tol: float = 1e-6, max_sweeps: int = 2000) -> Solution:
    """Synchronous value iteration started from the stopping costs.

    Raises :class:`ConvergenceError` if the sup-norm change is still at
    least ``tol`` after ``max_sweeps`` sweeps.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    check_solvable(model)
    dyn = dynamics_for(model, grid)
    stop_q = model.stop_costs(grid.points)
    switch = costs.cs * switch_matrix(model.n_actions)
    v = stop_q.copy()
    max_increase = -np.inf
    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        ev = dyn.expect(v)
        cont = (costs.c + switch[None] + ev[:, None, :]).min(axis=2)
        new = np.minimum(stop_q, cont)
        diff = new - v
        max_increase = max(max_increase, float(diff.max()))
        delta = float(np.abs(diff).max())
        v = new
        if delta < tol:
            break
    else:
        raise ConvergenceError("value iteration did not converge", max_sweeps, delta)
    log.debug("value iteration converged in %d sweeps", sweep)
    stop_q, cont_q = q_factors(model, costs, dyn, v)
    codes = select_actions(stop_q, cont_q, declared_locations(model, grid), model.k)
    return Solution(ValueTable(grid, v), PolicyTable(grid, codes), sweep, max_increase)


def continuation_value(model: TaskModel, costs: CostParams, table: ValueTable,
                       p, fixation: int, j: int) -> float:
    """Q-factor of moving to ``j`` from ``fixation``, evaluated off-grid."""
    p = check_belief(p)
    total = costs.c + (costs.cs if j != fixation else 0.0)
    for x, px in enumerate(model.predictive(p, j)):
        if px > 0.0:
            post = model.bayes_update(p, j, x)
            total += px * table.grid.interpolate(table.values[:, j], post)
    return total


def policy_action(policy: PolicyTable, p, fixation: int) -> Action:
    return policy.action(policy.grid.nearest(p), fixation)


def expectimax_oracle(model: TaskModel, costs: CostParams, p, fixation: int,
                      horizon: int) -> float:
    """Exact optimal cost when stopping is forced after ``horizon`` observations.

    Plain recursion over every action/observation branch; no grid.
    """
    cap = ORACLE_MAX_HORIZON.get(model.n_obs, 3)
    if not 0 <= horizon <= cap:
        raise ValueError(f"horizon must be in [0, {cap}] for this model")
    p = check_belief(p)
    obs = range(model.n_obs)

    def solve(belief, here, depth):
        stop, _ = stopping_value(model, belief, here)
        if depth == 0:
            return stop
        best = stop
        for j in range(model.n_actions):
            q = costs.c + (costs.cs if j != here else 0.0)
            pred = model.predictive(belief, j)
            for x in obs:
                if pred[x] > 0.0:
                    q += pred[x] * solve(model.bayes_update(belief, j, x), j, depth - 1)
            best = min(best, q)
        return best

    return solve(p, fixation, horizon)

