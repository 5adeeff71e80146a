"""Environment configuration and side-by-side policy comparison."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (
    DEFAULT_HORIZON,
    GreedyMapRunner,
    InfomaxRunner,
    calibrate_threshold,
    infomax_solve,
)
from .observation import PeripheralTaskModel, SimpleTaskModel, TaskModel
from .simplex import SimplexGrid, check_belief, enumerate_cells
from .solver import CostParams, Solution, value_iteration
from .trials import DEFAULT_CAP, CdacRunner, TrialStats, run_batch

log = logging.getLogger(__name__)

TASKS = ("simple", "peripheral")
DEFAULT_TRIALS = 10000


class ConfigError(ValueError):
    """Invalid environment configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class EnvironmentConfig:
    """Everything needed to solve and simulate one environment.

    ``beta`` applies to the simple task and ``betas`` to the peripheral
    one; whichever is not used must be left unset. ``initial_fixation``
    is an action name (``"l1"``, ``"l123"``, ...); by default the simple
    task starts at ``l1`` and the peripheral task at the center ``l123``.
    """

    task: str
    c: float
    cs: float = 0.0
    beta: float | None = None
    betas: tuple[float, ...] | None = None
    grid_n: int = 200
    initial_fixation: str | None = None
    prior: tuple[float, ...] | None = None
    trial_cap: int = DEFAULT_CAP
    seed: int = 0
    trials: int = DEFAULT_TRIALS
    tol: float = 1e-6
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.betas is not None:
            object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.prior is not None:
            object.__setattr__(self, "prior", tuple(float(v) for v in self.prior))
        if self.task == "simple" and self.betas is not None:
            raise ConfigError("the simple task takes 'beta', not 'betas'")
        if self.task == "peripheral" and self.beta is not None:
            raise ConfigError("the peripheral task takes 'betas', not 'beta'")
        for name in ("grid_n", "trial_cap", "trials", "horizon"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        # validate through the owning objects
        try:
            model = self.model()
            self.costs()
            self.fixation_index()
            if self.prior is not None:
                if len(self.prior) != model.k:
                    raise ValueError(f"prior needs {model.k} entries")
                check_belief(self.prior)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "task" not in data or "c" not in data:
            raise ConfigError("config needs at least 'task' and 'c'")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "EnvironmentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("betas", "prior"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    def replace(self, **changes) -> "EnvironmentConfig":
        return dataclasses.replace(self, **changes)

    def model(self) -> TaskModel:
        if self.task == "simple":
            return SimpleTaskModel() if self.beta is None else SimpleTaskModel(self.beta)
        return PeripheralTaskModel() if self.betas is None else PeripheralTaskModel(self.betas)

    def costs(self) -> CostParams:
        return CostParams(self.c, self.cs)

    def grid(self) -> SimplexGrid:
        return enumerate_cells(self.model().k, self.grid_n)

    def fixation_index(self) -> int:
        model = self.model()
        name = self.initial_fixation or ("l1" if self.task == "simple" else "l123")
        return model.action_index(name)

    def prior_array(self) -> np.ndarray | None:
        return None if self.prior is None else check_belief(self.prior)


def solve_environment(env: EnvironmentConfig) -> Solution:
    return value_iteration(env.model(), env.costs(), env.grid(), tol=env.tol)


@dataclass(frozen=True)
class PolicyRow:
    name: str
    stats: TrialStats
    threshold: float | None = None
    matched: bool = True


@dataclass(frozen=True)
class ComparisonReport:
    env: EnvironmentConfig
    rows: tuple[PolicyRow, ...]
    sweeps: int

    def row(self, name: str) -> PolicyRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        head = ("policy", "threshold", "accuracy", "steps", "switches", "total cost", "capped")
        body = []
        for r in self.rows:
            s = r.stats
            theta = "-" if r.threshold is None else f"{r.threshold:.4f}"
            if not r.matched:
                theta += "*"
            body.append((
                r.name, theta,
                _pm(s.accuracy, s.se_accuracy), _pm(s.mean_steps, s.se_steps),
                _pm(s.mean_switches, s.se_switches), _pm(s.mean_cost, s.se_cost),
                str(s.capped),
            ))
        widths = [max(len(row[i]) for row in (head, *body)) for i in range(len(head))]
        lines = [
            f"task={self.env.task} c={self.env.c:g} cs={self.env.cs:g} "
            f"trials={self.env.trials} seed={self.env.seed}",
            "  ".join(h.ljust(w) for h, w in zip(head, widths)),
            "  ".join("-" * w for w in widths),
        ]
        lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in body]
        if any(not r.matched for r in self.rows):
            lines.append("* no threshold reached the target accuracy; lowest threshold shown")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["policy", "threshold", "matched", "accuracy", "se_accuracy",
                  "mean_steps", "se_steps", "mean_switches", "se_switches",
                  "mean_cost", "se_cost", "capped", "n_trials", "seed"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            row = {"policy": r.name, "threshold": "" if r.threshold is None else repr(r.threshold),
                   "matched": int(r.matched), "seed": r.stats.seed}
            for key, value in r.stats.as_row().items():
                row[key] = "" if value is None else repr(value)
            writer.writerow(row)
        return buf.getvalue()


def _pm(mean: float, se: float | None) -> str:
    return f"{mean:.4f}" if se is None else f"{mean:.4f} ± {se:.4f}"


def compare_policies(env: EnvironmentConfig, n_trials: int | None = None,
                     include_greedy: bool = False,
                     solution: Solution | None = None) -> ComparisonReport:
    """Run C-DAC and accuracy-matched threshold baselines on common trials.

    The infomax (and optionally greedy-MAP) threshold is calibrated so the
    baseline's accuracy matches C-DAC's; all batches replay the same
    targets and noise.
    """
    n = n_trials or env.trials
    if n_trials is not None:
        env = env.replace(trials=n)
    model, costs = env.model(), env.costs()
    fix, prior, cap, seed = env.fixation_index(), env.prior_array(), env.trial_cap, env.seed
    solution = solution or solve_environment(env)
    cdac = run_batch(CdacRunner(solution.policy), model, costs, n, seed, fix, prior, cap).stats()
    rows = [PolicyRow("C-DAC", cdac)]

    table = infomax_solve(model, solution.policy.grid, env.horizon)
    rules = [("infomax", lambda th: InfomaxRunner(model, table, th))]
    if include_greedy:
        rules.append(("greedy-MAP", lambda th: GreedyMapRunner(model, th)))
    for name, make in rules:
        cal = calibrate_threshold(model, make, cdac.accuracy, max(n, 1000), seed, fix,
                                  costs, prior, cap)
        stats = run_batch(make(cal.threshold), model, costs, n, seed, fix, prior, cap).stats()
        rows.append(PolicyRow(name, stats, cal.threshold, cal.matched))
    return ComparisonReport(env, tuple(rows), solution.sweeps)
