"""Finite Markov reward processes: representation, exact values, sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .rewards import RewardKind, RewardModel, open_uniform

ROW_SUM_TOL = 1e-12


class Transition(NamedTuple):
    x: int
    r: float
    x_next: int


@dataclass(frozen=True, eq=False)
class Mrp:
    """A Markov chain with one reward law per departing state and a discount.

    Rewards depend only on the state being left, never on ``x_next``.
    """

    transition: np.ndarray
    rewards: tuple
    gamma: float
    name: str = "mrp"
    cum_transition: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("transition matrix must be row-stochastic")
        rewards = tuple(self.rewards)
        if len(rewards) != P.shape[0]:
            raise ValueError("need exactly one reward model per state")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "cum_transition", _sampling_table(P))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def mean_rewards(self) -> np.ndarray:
        return np.array([r.mean for r in self.rewards])

    @property
    def reward_kinds(self) -> tuple:
        return tuple(r.kind for r in self.rewards)

    def __eq__(self, other):
        if not isinstance(other, Mrp):
            return NotImplemented
        return (
            np.array_equal(self.transition, other.transition)
            and self.rewards == other.rewards
            and self.gamma == other.gamma
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "rewards": [r.to_record() for r in self.rewards],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mrp":
        return cls(
            transition=np.asarray(d["transition"], dtype=float),
            rewards=tuple(RewardModel.from_record(r) for r in d["rewards"]),
            gamma=float(d["gamma"]),
            name=d.get("name", "mrp"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "Mrp":
        return cls.from_dict(json.loads(text))


def _sampling_table(P):
    # Cumulative rows pinned to exactly 1.0 from each row's last positive
    # entry onward, so a uniform in (0, 1) never lands on a zero-mass state.
    cum = np.cumsum(P, axis=1)
    for x in range(P.shape[0]):
        last = np.flatnonzero(P[x] > 0)[-1]
        cum[x, last:] = 1.0
    cum.setflags(write=False)
    return cum


def next_state(cum_row: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cum_row, u, side="right"))


def step(mrp: Mrp, x: int, rng: np.random.Generator) -> Transition:
    """Sample one transition from ``x``: next state first, then the reward."""
    u_next, u_reward = open_uniform(rng, 2)
    x_next = next_state(mrp.cum_transition[x], u_next)
    r = mrp.rewards[x].quantile(u_reward)
    return Transition(int(x), float(r), x_next)


def true_value(mrp: Mrp) -> np.ndarray:
    """Solve ``(I - gamma P) V = rbar`` directly."""
    n = mrp.n_states
    return np.linalg.solve(np.eye(n) - mrp.gamma * mrp.transition, mrp.mean_rewards)


def bellman_residual(mrp: Mrp, v: np.ndarray) -> float:
    return float(np.max(np.abs(v - (mrp.mean_rewards + mrp.gamma * mrp.transition @ v))))


def stationary_distribution(mrp: Mrp) -> np.ndarray:
    """Average-occupancy distribution (Cesaro limit), well defined for periodic chains."""
    n = mrp.n_states
    A = np.vstack([mrp.transition.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    d, *_ = np.linalg.lstsq(A, b, rcond=None)
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def reward_support_bounds(mrp: Mrp) -> tuple[float, float]:
    lows, highs = zip(*(r.support() for r in mrp.rewards))
    return min(lows), max(highs)


def mc_horizon(gamma: float, eps: float = 1e-6) -> int:
    if gamma == 0.0:
        return 1
    return int(math.ceil(math.log(eps) / math.log(gamma)))


def sample_return(mrp: Mrp, x: int, rng: np.random.Generator, horizon: int | None = None) -> float:
    """Discounted return of one trajectory truncated at ``horizon`` steps."""
    if horizon is None:
        horizon = mc_horizon(mrp.gamma)
    g, disc = 0.0, 1.0
    for _ in range(horizon):
        t = step(mrp, x, rng)
        g += disc * t.r
        disc *= mrp.gamma
        x = t.x_next
    return g


def is_bounded(mrp: Mrp) -> bool:
    return all(r.kind is RewardKind.POINT_MASS for r in mrp.rewards)
