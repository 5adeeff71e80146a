"""Monte Carlo trial engine.

Trials in a batch are stepped together as arrays, but every trial owns its
own seeded random stream: each step consumes one row of uniforms, the
first ``n_bits`` deciding the observation and the last reserved for
policy tie-breaks. A trial's outcome therefore depends only on its seed,
its target and the policy, never on which other trials share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol

import numpy as np

from .observation import TaskModel
from .solver import CostParams, PolicyTable

DEFAULT_CAP = 300
_CHUNK = 32


class PolicyRunner(Protocol):
    def act(self, beliefs: np.ndarray, fixations: np.ndarray,
            u: np.ndarray) -> np.ndarray:
        """Action codes for a stack of (belief, fixation) states.

        Codes below ``k`` stop and declare that location; ``k + j`` moves to
        fixation action ``j``. ``u`` holds one uniform per state for
        randomized tie-breaking.
        """
        ...


class CdacRunner:
    """Looks up a solved policy table at the nearest lattice cell."""

    def __init__(self, policy: PolicyTable):
        self.policy = policy

    def act(self, beliefs, fixations, u):
        cells = self.policy.grid.nearest(beliefs)
        return self.policy.codes[cells, fixations].astype(np.int64)


class AlwaysStop:
    def __init__(self, model: TaskModel):
        self.model = model

    def act(self, beliefs, fixations, u):
        return self.model.declarations(beliefs, fixations)


@dataclass(frozen=True)
class TrialRecord:
    steps: int
    switches: int
    declared: int
    target: int
    correct: bool
    capped: bool
    cost: float


@dataclass(frozen=True)
class TrialStats:
    n_trials: int
    seed: int | None
    accuracy: float
    mean_steps: float
    mean_switches: float
    mean_cost: float
    se_accuracy: float | None
    se_steps: float | None
    se_switches: float | None
    se_cost: float | None
    capped: int

    def as_row(self) -> dict:
        return {
            "accuracy": self.accuracy, "se_accuracy": self.se_accuracy,
            "mean_steps": self.mean_steps, "se_steps": self.se_steps,
            "mean_switches": self.mean_switches, "se_switches": self.se_switches,
            "mean_cost": self.mean_cost, "se_cost": self.se_cost,
            "capped": self.capped, "n_trials": self.n_trials,
        }


@dataclass(frozen=True, eq=False)
class TrialBatch:
    steps: np.ndarray
    switches: np.ndarray
    declared: np.ndarray
    targets: np.ndarray
    capped: np.ndarray
    costs: CostParams
    seed: int | None = None

    @property
    def correct(self) -> np.ndarray:
        return (self.declared == self.targets) & ~self.capped

    @property
    def total_cost(self) -> np.ndarray:
        return (self.costs.c * self.steps + self.costs.cs * self.switches
                + (~self.correct).astype(float))

    def record(self, i: int) -> TrialRecord:
        return TrialRecord(
            steps=int(self.steps[i]), switches=int(self.switches[i]),
            declared=int(self.declared[i]), target=int(self.targets[i]),
            correct=bool(self.correct[i]), capped=bool(self.capped[i]),
            cost=float(self.total_cost[i]),
        )

    def records(self) -> list[TrialRecord]:
        return [self.record(i) for i in range(len(self.steps))]

    def stats(self) -> TrialStats:
        n = len(self.steps)

        def mean_se(x):
            x = np.asarray(x, dtype=float)
            # fixed summation order for reproducibility
            mean = float(np.add.reduce(x) / n)
            se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else None
            return mean, se

        acc, se_acc = mean_se(self.correct)
        steps, se_steps = mean_se(self.steps)
        sw, se_sw = mean_se(self.switches)
        cost, se_cost = mean_se(self.total_cost)
        return TrialStats(n, self.seed, acc, steps, sw, cost,
                          se_acc, se_steps, se_sw, se_cost, int(self.capped.sum()))


class TrialStreams:
    """Lazily drawn per-trial uniforms, reusable across policy evaluations."""

    def __init__(self, seeds, width: int):
        self.gens = [np.random.default_rng(int(s)) for s in seeds]
        self.width = width
        self.rows = np.zeros((len(self.gens), 0, width))
        self.filled = np.zeros(len(self.gens), dtype=np.int64)

    def step(self, trials: np.ndarray, t: int) -> np.ndarray:
        need = trials[self.filled[trials] <= t]
        if need.size:
            if self.rows.shape[1] <= t:
                grow = np.zeros((len(self.gens), _CHUNK, self.width))
                self.rows = np.concatenate([self.rows, grow], axis=1)
            for i in need:
                lo = self.filled[i]
                self.rows[i, lo:lo + _CHUNK] = self.gens[i].random((_CHUNK, self.width))
                self.filled[i] = lo + _CHUNK
        return self.rows[trials, t]


def trial_seeds(master_seed: int, n_trials: int, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial seeds and uniformly drawn targets from a master seed."""
    seeds = np.random.SeedSequence(master_seed).generate_state(n_trials, dtype=np.uint64)
    targets = np.random.default_rng([master_seed, 1]).integers(k, size=n_trials)
    return seeds, targets


@lru_cache(maxsize=4)
def _batch_streams(master_seed: int, n_trials: int, width: int) -> TrialStreams:
    seeds, _ = trial_seeds(master_seed, n_trials)
    return TrialStreams(seeds, width)


def simulate(runner: PolicyRunner, model: TaskModel, costs: CostParams,
             targets, streams: TrialStreams, initial_fixation: int,
             prior=None, cap: int = DEFAULT_CAP, seed: int | None = None,
             generative: TaskModel | None = None) -> TrialBatch:
    """Step all trials until they stop or hit ``cap`` observations.

    Observations are drawn from ``generative`` (default: ``model``) and
    beliefs are updated with ``model``. Switches count changes between
    consecutive observation locations; moving away from the initial
    fixation before the first observation is not counted.
    """
    source = model if generative is None else generative
    targets = np.asarray(targets, dtype=np.int64)
    m, k = len(targets), model.k
    prior = np.full(k, 1.0 / k) if prior is None else np.asarray(prior, dtype=float)
    beliefs = np.tile(prior, (m, 1))
    fix = np.full(m, initial_fixation, dtype=np.int64)
    steps = np.zeros(m, dtype=np.int64)
    switches = np.zeros(m, dtype=np.int64)
    declared = np.full(m, -1, dtype=np.int64)
    capped = np.zeros(m, dtype=bool)
    active = np.arange(m)
    weights = 1 << np.arange(model.n_bits - 1, -1, -1)
    for t in range(cap + 1):
        if active.size == 0:
            break
        u = streams.step(active, t)
        p, here = beliefs[active], fix[active]
        codes = np.asarray(runner.act(p, here, u[:, -1]), dtype=np.int64)
        stop = codes < k
        if t == cap:
            forced = ~stop
            codes = np.where(forced, model.declarations(p, here), codes)
            capped[active[forced]] = True
            stop = np.ones_like(stop)
        declared[active[stop]] = codes[stop]
        go = active[~stop]
        if go.size == 0:
            active = go
            continue
        j = codes[~stop] - k
        bits = u[~stop, :-1] < source.success[j, targets[go]]
        x = bits.astype(np.int64) @ weights
        joint = beliefs[go] * model.table[j, :, x]
        beliefs[go] = joint / joint.sum(axis=1, keepdims=True)
        switches[go] += (j != fix[go]) & (steps[go] > 0)
        fix[go] = j
        steps[go] += 1
        active = go
    return TrialBatch(steps, switches, declared, targets, capped, costs, seed)


def run_trial(runner: PolicyRunner, model: TaskModel, costs: CostParams,
              target: int, seed: int, initial_fixation: int, prior=None,
              cap: int = DEFAULT_CAP, generative: TaskModel | None = None) -> TrialRecord:
    streams = TrialStreams([seed], model.n_bits + 1)
    batch = simulate(runner, model, costs, [target], streams, initial_fixation,
                     prior, cap, generative=generative)
    return batch.record(0)


def run_batch(runner: PolicyRunner, model: TaskModel, costs: CostParams,
              n_trials: int, master_seed: int, initial_fixation: int,
              prior=None, cap: int = DEFAULT_CAP,
              generative: TaskModel | None = None) -> TrialBatch:
    """Simulate ``n_trials`` trials with uniformly drawn targets.

    The same master seed replays identical targets and observation noise,
    so different policies are compared under common random numbers.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    _, targets = trial_seeds(master_seed, n_trials, model.k)
    streams = _batch_streams(master_seed, n_trials, model.n_bits + 1)
    return simulate(runner, model, costs, targets, streams, initial_fixation,
                    prior, cap, seed=master_seed, generative=generative)
