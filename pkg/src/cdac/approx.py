"""Approximate value iteration with low-dimensional value representations.

Instead of backing up every grid cell, each iteration draws fresh uniform
beliefs, evaluates the Bellman backup there using the current
representation for next-state values, and refits. One representation is
kept per fixation action. Two representations are provided: Gaussian
radial basis functions with a minimum-norm least-squares fit, and
Gaussian-process regression (optionally with hyperparameters picked by
maximizing the marginal likelihood over a log grid).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, IllConditionedError
from .observation import TaskModel
from .simplex import SimplexGrid, check_belief, enumerate_cells, sample_simplex
from .solver import (
    CostParams,
    PolicyTable,
    ValueTable,
    check_solvable,
    declared_locations,
    select_actions,
    switch_matrix,
)

log = logging.getLogger(__name__)

TOL_APPROX = 1e-4
MAX_ITERATIONS = 100
N_PROBE = 500


# -- radial basis functions ---------------------------------------------------

def rbf_centers(count: int = 49, k: int = 3) -> np.ndarray:
    """``count`` lattice points of the simplex, the most central ones first.

    Uses the smallest lattice with at least ``count`` points and keeps those
    closest to the barycenter (ties broken by lattice order).
    """
    n = 1
    while enumerate_cells(k, n).size < count:
        n += 1
    pts = enumerate_cells(k, n).points
    dist = np.linalg.norm(pts - 1.0 / k, axis=1)
    keep = np.sort(np.argsort(dist, kind="stable")[:count])
    return pts[keep]


def rbf_features(points: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    k = centers.shape[1]
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / (2.0 * sigma**2)) / (sigma * (2.0 * np.pi) ** (k / 2))


@dataclass
class RbfFit:
    weights: np.ndarray
    rank: int
    condition: float


def rbf_fit(centers: np.ndarray, sigma: float, points: np.ndarray,
            targets: np.ndarray) -> RbfFit:
    """Minimum-norm least-squares weights (SVD with the default cutoff)."""
    phi = rbf_features(np.atleast_2d(points), centers, sigma)
    targets = np.asarray(targets, dtype=float)
    w, _, rank, sv = np.linalg.lstsq(phi, targets, rcond=None)
    if rank == 0:
        raise IllConditionedError("RBF design matrix has numerical rank 0")
    cond = float(sv[0] / sv[rank - 1])
    return RbfFit(w, int(rank), cond)


@dataclass
class RbfModel:
    centers: np.ndarray
    sigma: float
    weights: np.ndarray  # (M, A)
    rank: list[int] = field(default_factory=list)
    condition: list[float] = field(default_factory=list)

    def predict(self, points: np.ndarray, action: int | None = None) -> np.ndarray:
        phi = rbf_features(np.atleast_2d(points), self.centers, self.sigma)
        w = self.weights if action is None else self.weights[:, action]
        return phi @ w

    def refit(self, points: np.ndarray, targets: np.ndarray) -> "RbfModel":
        fits = [rbf_fit(self.centers, self.sigma, points, targets[:, a])
                for a in range(targets.shape[1])]
        return RbfModel(self.centers, self.sigma,
                        np.column_stack([f.weights for f in fits]),
                        [f.rank for f in fits], [f.condition for f in fits])


def rbf_eval(model: RbfModel, p, action: int) -> float:
    return float(model.predict(check_belief(p)[None, :], action)[0])


# -- Gaussian-process regression ----------------------------------------------

@dataclass(frozen=True)
class GprHyper:
    signal: float = 1.0
    length: float | tuple[float, ...] = 1.0
    noise: float = 0.1

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length, dtype=float))
        if not (self.signal > 0 and self.noise > 0 and np.all(ls > 0)):
            raise ValueError("GPR hyperparameters must be positive")

    def lengths(self, dim: int) -> np.ndarray:
        ls = np.atleast_1d(np.asarray(self.length, dtype=float))
        return np.broadcast_to(ls, (dim,)) if ls.size == 1 else ls


def rbf_kernel(a: np.ndarray, b: np.ndarray, signal: float,
               lengths: np.ndarray) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) / lengths
    return signal**2 * np.exp(-0.5 * (d**2).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class GprModel:
    points: np.ndarray
    targets: np.ndarray  # (N,) or (N, A)
    hyper: GprHyper
    factor: tuple
    alpha: np.ndarray

    def predict(self, x: np.ndarray, action: int | None = None) -> np.ndarray:
        ks = rbf_kernel(np.atleast_2d(x), self.points, self.hyper.signal,
                        self.hyper.lengths(self.points.shape[1]))
        alpha = self.alpha if action is None or self.alpha.ndim == 1 else self.alpha[:, action]
        return ks @ alpha


def gpr_fit(points, targets, hyper: GprHyper = GprHyper()) -> GprModel:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if points.shape[0] < 1:
        raise ValueError("need at least one training point")
    k = rbf_kernel(points, points, hyper.signal, hyper.lengths(points.shape[1]))
    k[np.diag_indices_from(k)] += hyper.noise**2
    try:
        factor = linalg.cho_factor(k, lower=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedError(f"kernel matrix is not positive definite: {exc}") from None
    alpha = linalg.cho_solve(factor, targets)
    return GprModel(points, targets, hyper, factor, alpha)


def gpr_predict(model: GprModel, p) -> float:
    return float(model.predict(np.asarray(p, dtype=float)[None, :])[0])


def log_marginal_likelihood(points, targets, hyper: GprHyper) -> float:
    model = gpr_fit(points, targets, hyper)
    c, _ = model.factor
    y = np.asarray(targets, dtype=float)
    n = len(y)
    return float(-0.5 * y @ model.alpha - np.log(np.diag(c)).sum()
                 - 0.5 * n * np.log(2 * np.pi))


def default_search_grid(dim: int, per_axis: int = 5) -> dict[str, np.ndarray]:
    axis = np.logspace(-1, 1, per_axis)
    return {"signal": axis, "length": [axis] * dim, "noise": axis}


def gpr_fit_ard(points, targets, grid: dict | None = None) -> GprHyper:
    """Exhaustive log-grid search of the marginal likelihood.

    For each length-scale combination the unit-signal kernel is
    eigendecomposed once; every (signal, noise) pair is then scored in
    closed form. Ties go to the first candidate in grid order.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(targets, dtype=float)
    n, dim = points.shape
    grid = grid or default_search_grid(dim)
    signals = np.asarray(grid["signal"], dtype=float)
    noises = np.asarray(grid["noise"], dtype=float)
    length_axes = [np.asarray(a, dtype=float) for a in grid["length"]]
    if len(length_axes) != dim:
        raise ValueError("need one length-scale axis per input dimension")
    if min(signals.min(), noises.min(), min(a.min() for a in length_axes)) <= 0:
        raise ValueError("search grid values must be positive")
    s2 = signals[:, None, None] ** 2
    n2 = noises[None, :, None] ** 2
    best, best_hyper = -np.inf, None
    for ls in itertools.product(*length_axes):
        lam, vec = np.linalg.eigh(rbf_kernel(points, points, 1.0, np.asarray(ls)))
        lam = np.clip(lam, 0.0, None)
        proj = (vec.T @ y) ** 2
        d = s2 * lam[None, None, :] + n2
        with np.errstate(divide="ignore", invalid="ignore"):
            lml = -0.5 * (proj / d).sum(-1) - 0.5 * np.log(d).sum(-1) - 0.5 * n * np.log(2 * np.pi)
        lml = np.where(np.all(d > 0, axis=-1), lml, -np.inf)
        i, j = np.unravel_index(np.argmax(lml), lml.shape)
        if lml[i, j] > best:
            best = lml[i, j]
            best_hyper = GprHyper(float(signals[i]), tuple(float(v) for v in ls),
                                  float(noises[j]))
    if best_hyper is None:
        raise IllConditionedError("no candidate gives a positive definite kernel")
    return best_hyper


@dataclass
class GprValue:
    """One GPR per fixation action, all trained on the same sampled beliefs."""

    models: list[GprModel]

    def predict(self, points: np.ndarray, action: int | None = None) -> np.ndarray:
        if action is not None:
            return self.models[action].predict(points)
        return np.column_stack([m.predict(points) for m in self.models])


# -- approximate value iteration ----------------------------------------------

@dataclass
class ApproxResult:
    representation: RbfModel | GprValue
    policy: PolicyTable
    values: ValueTable
    iterations: int
    changes: list[float]


def _backup(model: TaskModel, costs: CostParams, represent, points: np.ndarray) -> np.ndarray:
    """Bellman backup at ``points`` through the current representation, (m, A)."""
    m, k = points.shape
    ev = np.empty((m, model.n_actions))
    for j in range(model.n_actions):
        prob, post = model.posteriors(points, j)
        nxt = represent.predict(post.reshape(-1, k), j).reshape(m, model.n_obs)
        ev[:, j] = (prob * nxt).sum(axis=1)
    switch = costs.cs * switch_matrix(model.n_actions)
    cont = (costs.c + switch[None] + ev[:, None, :]).min(axis=2)
    return np.minimum(model.stop_costs(points), cont)


def _policy_on_grid(model, costs, represent, grid):
    pts = grid.points
    k = model.k
    ev = np.empty((grid.size, model.n_actions))
    for j in range(model.n_actions):
        prob, post = model.posteriors(pts, j)
        nxt = represent.predict(post.reshape(-1, k), j).reshape(grid.size, model.n_obs)
        ev[:, j] = (prob * nxt).sum(axis=1)
    stop_q = model.stop_costs(pts)
    cont_q = costs.c + costs.cs * switch_matrix(model.n_actions)[None] + ev[:, None, :]
    codes = select_actions(stop_q, cont_q, declared_locations(model, grid), k)
    values = np.minimum(stop_q, cont_q.min(axis=2))
    return PolicyTable(grid, codes), ValueTable(grid, values)


def approx_value_iteration(model: TaskModel, costs: CostParams, representation: str = "rbf",
                           m: int = 1000, seed: int = 0, grid: SimplexGrid | None = None,
                           n_centers: int = 49, sigma: float = 1.0,
                           hyper: GprHyper = GprHyper(), learn_hyper: bool = False,
                           tol: float = TOL_APPROX,
                           max_iterations: int = MAX_ITERATIONS) -> ApproxResult:
    """Sampled fitted value iteration with an RBF or GPR representation.

    ``m`` is the number of beliefs sampled per iteration (``N`` for GPR).
    Convergence is declared when predictions on a fixed probe set move by
    less than ``tol`` (sup norm); otherwise :class:`ConvergenceError` is
    raised with the last iterate attached as ``.result``. With ``learn_hyper`` the GPR
    hyperparameters are chosen per action by :func:`gpr_fit_ard` on the
    initial fit and then held fixed.
    """
    check_solvable(model)
    grid = grid or enumerate_cells(model.k, 200)
    rng = np.random.default_rng(seed)
    probe = sample_simplex(np.random.default_rng([seed, 0x9B0BE]), N_PROBE, model.k)

    if representation == "rbf":
        centers = rbf_centers(n_centers, model.k)
        if m < len(centers):
            raise ValueError("need at least as many samples as basis functions")

        def fit(points, targets, hypers=None):
            return RbfModel(centers, sigma, np.zeros((len(centers), targets.shape[1]))).refit(points, targets)
    elif representation == "gpr":
        if m < 1:
            raise ValueError("need at least one sample")

        def fit(points, targets, hypers=None):
            hypers = hypers or [hyper] * targets.shape[1]
            return GprValue([gpr_fit(points, targets[:, a], hypers[a])
                             for a in range(targets.shape[1])])
    else:
        raise ValueError(f"unknown representation {representation!r}")

    points = sample_simplex(rng, m, model.k)
    targets = model.stop_costs(points)
    hypers = None
    if representation == "gpr" and learn_hyper:
        hypers = [gpr_fit_ard(points, targets[:, a]) for a in range(model.n_actions)]
        log.debug("ARD hyperparameters: %s", hypers)
    current = fit(points, targets, hypers)
    before = current.predict(probe)
    changes = []
    for it in range(1, max_iterations + 1):
        points = sample_simplex(rng, m, model.k)
        targets = _backup(model, costs, current, points)
        current = fit(points, targets, hypers)
        after = current.predict(probe)
        changes.append(float(np.abs(after - before).max()))
        before = after
        if changes[-1] < tol:
            break
    policy, values = _policy_on_grid(model, costs, current, grid)
    result = ApproxResult(current, policy, values, it, changes)
    if changes[-1] >= tol:
        err = ConvergenceError("approximate value iteration did not converge",
                               max_iterations, changes[-1])
        err.result = result
        raise err
    return result
