"""Observation models for the two visual-search tasks.

Both models are summarized by a likelihood table ``L[a, s, x]`` giving the
probability of observation index ``x`` when fixating action ``a`` with the
target at location ``s``. Locations, actions and observations are 0-based.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np

from .simplex import check_belief


class IllPosedUpdate(ArithmeticError):
    """The observation has zero probability under the current belief."""


@dataclass(frozen=True, eq=False)
class _Model:
    """Shared machinery; subclasses fill ``success`` and the action layout."""

    k: ClassVar[int] = 3
    declares_fixated: ClassVar[bool]
    action_names: ClassVar[tuple[str, ...]]

    # P(x_d = 1 | s, a), shape (n_actions, k, n_bits)
    success: np.ndarray = field(init=False, repr=False)
    table: np.ndarray = field(init=False, repr=False)
    observations: np.ndarray = field(init=False, repr=False)

    def _build(self, success: np.ndarray) -> None:
        bits = success.shape[-1]
        obs = np.array(list(itertools.product((0, 1), repeat=bits)), dtype=np.int64)
        # (a, s, x, d) -> per-component probability, product over d
        q = success[:, :, None, :]
        comp = np.where(obs[None, None, :, :] == 1, q, 1.0 - q)
        table = comp.prod(axis=-1)
        for arr in (success, obs, table):
            arr.setflags(write=False)
        object.__setattr__(self, "success", success)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "table", table)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def n_obs(self) -> int:
        return self.observations.shape[0]

    @property
    def n_bits(self) -> int:
        return self.observations.shape[1]

    def action_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.n_actions:
                raise ValueError(f"invalid action {name!r}")
            return int(name)
        try:
            return self.action_names.index(name)
        except ValueError:
            raise ValueError(f"invalid action {name!r}") from None

    def obs_index(self, x) -> int:
        """Index of an observation given as a bit, a bit tuple, or an index."""
        if isinstance(x, (int, np.integer)) and self.n_bits == 1:
            bits = (int(x),)
        elif isinstance(x, (int, np.integer)):
            if not 0 <= x < self.n_obs:
                raise ValueError(f"invalid observation {x!r}")
            return int(x)
        else:
            bits = tuple(int(b) for b in x)
        if len(bits) != self.n_bits or any(b not in (0, 1) for b in bits):
            raise ValueError(f"invalid observation {x!r}")
        return int(sum(b << (self.n_bits - 1 - d) for d, b in enumerate(bits)))

    def _check_sa(self, s: int, a: int) -> None:
        if not 0 <= s < self.k:
            raise ValueError(f"invalid location {s!r}")
        if not 0 <= a < self.n_actions:
            raise ValueError(f"invalid action {a!r}")

    def likelihood(self, s: int, a: int, x) -> float:
        self._check_sa(s, a)
        return float(self.table[a, s, self.obs_index(x)])

    def bayes_update(self, p, a: int, x) -> np.ndarray:
        p = check_belief(p)
        joint = self.table[a, :, self.obs_index(x)] * p
        total = joint.sum()
        if total <= 0.0:
            raise IllPosedUpdate("observation has zero predictive probability")
        return joint / total

    def predictive(self, p, a: int) -> np.ndarray:
        p = check_belief(p)
        if not 0 <= a < self.n_actions:
            raise ValueError(f"invalid action {a!r}")
        return p @ self.table[a]

    def posteriors(self, points: np.ndarray, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Predictive probabilities ``(m, n_obs)`` and posteriors ``(m, n_obs, k)``.

        Zero-probability branches get a uniform placeholder posterior.
        """
        joint = points[:, None, :] * self.table[a].T[None, :, :]
        prob = joint.sum(axis=-1)
        safe = np.where(prob > 0.0, prob, 1.0)
        post = joint / safe[..., None]
        post[prob <= 0.0] = 1.0 / self.k
        return prob, post

    def sample_observation(self, s: int, a: int, rng: np.random.Generator):
        """Draw one observation; a bit for the simple task, a bit tuple otherwise."""
        self._check_sa(s, a)
        bits = rng.random(self.n_bits) < self.success[a, s]
        if self.n_bits == 1:
            return int(bits[0])
        return tuple(int(b) for b in bits)

    def action_permutation(self, sigma: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def stop_costs(self, points: np.ndarray) -> np.ndarray:
        """Residual stopping cost per (point, current fixation), shape ``(m, A)``."""
        raise NotImplementedError

    def declarations(self, points: np.ndarray, fixation: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SimpleTaskModel(_Model):
    """Three patches; one binary observation from the fixated patch.

    The agent may only declare the patch it is currently fixating.
    """

    beta1: float = 0.9

    declares_fixated: ClassVar[bool] = True
    action_names: ClassVar[tuple[str, ...]] = ("l1", "l2", "l3")

    def __post_init__(self):
        if not 0.5 < self.beta1 <= 1.0:
            raise ValueError(f"beta1 must lie in (0.5, 1], got {self.beta1!r}")
        beta0 = 1.0 - self.beta1
        success = np.where(np.eye(self.k, dtype=bool), self.beta1, beta0)[:, :, None]
        self._build(success.astype(float))

    @property
    def beta0(self) -> float:
        return 1.0 - self.beta1

    def action_permutation(self, sigma):
        return np.asarray(sigma, dtype=np.int64)

    def stop_costs(self, points):
        return 1.0 - points

    def declarations(self, points, fixation):
        return np.asarray(fixation, dtype=np.int64)


# which locations each peripheral action sees at which acuity level (0-based)
_PERIPHERAL_LEVELS = np.array(
    [
        [0, 3, 3],  # l1
        [3, 0, 3],  # l2
        [3, 3, 0],  # l3
        [1, 1, 3],  # l12
        [3, 1, 1],  # l23
        [1, 3, 1],  # l13
        [2, 2, 2],  # l123
    ]
)
_PERIPHERAL_SETS = ({0}, {1}, {2}, {0, 1}, {1, 2}, {0, 2}, {0, 1, 2})


@dataclass(frozen=True, eq=False)
class PeripheralTaskModel(_Model):
    """Seven fixation points with a four-level acuity map.

    Each observation is three conditionally independent bits, one per
    target location; the agent may stop and declare from anywhere.
    """

    betas: tuple[float, float, float, float] = (0.62, 0.6, 0.55, 0.5)

    declares_fixated: ClassVar[bool] = False
    action_names: ClassVar[tuple[str, ...]] = (
        "l1", "l2", "l3", "l12", "l23", "l13", "l123",
    )

    def __post_init__(self):
        b = tuple(float(v) for v in self.betas)
        if len(b) != 4:
            raise ValueError("need four acuity parameters")
        if not (1.0 > b[0] > b[1] > b[2] > b[3] >= 0.5):
            raise ValueError(f"need 1 > b1 > b2 > b3 > b4 >= 0.5, got {b!r}")
        object.__setattr__(self, "betas", b)
        level = np.asarray(b)[_PERIPHERAL_LEVELS]  # (a, d)
        is_target = np.eye(self.k, dtype=bool)  # (s, d)
        success = np.where(is_target[None], level[:, None, :], 1.0 - level[:, None, :])
        self._build(success)

    def action_permutation(self, sigma):
        sigma = np.asarray(sigma, dtype=np.int64)
        out = np.empty(self.n_actions, dtype=np.int64)
        for a, locs in enumerate(_PERIPHERAL_SETS):
            out[a] = _PERIPHERAL_SETS.index({int(sigma[i]) for i in locs})
        return out

    def stop_costs(self, points):
        cost = 1.0 - points.max(axis=1)
        return np.repeat(cost[:, None], self.n_actions, axis=1)

    def declarations(self, points, fixation):
        return np.argmax(points, axis=1)


TaskModel = SimpleTaskModel | PeripheralTaskModel
