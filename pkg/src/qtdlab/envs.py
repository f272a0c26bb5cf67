"""Seeded generators for the benchmark environments."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .mrp import Mrp
from .rewards import RewardKind, RewardModel

# Sub-stream tags: structure and reward means never share random numbers, so
# swapping the reward family keeps the same matrix and means.
_TAG_TRANSITIONS = 0
_TAG_REWARD_MEANS = 1

SKEW_PROB = 0.1


class TransitionKind(str, enum.Enum):
    DIRICHLET = "dirichlet"
    GARNET = "garnet"
    CYCLE = "cycle"

    @classmethod
    def parse(cls, value):
        if isinstance(value, TransitionKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown transition kind {value!r}") from None


DEFAULT_STATES = {TransitionKind.DIRICHLET: 20, TransitionKind.GARNET: 20, TransitionKind.CYCLE: 10}


@dataclass(frozen=True)
class EnvSpec:
    transition_kind: TransitionKind
    reward_kind: RewardKind
    n_states: int | None = None
    branching: int = 6
    reward_scale: float = 1.0
    gamma: float = 0.9
    seed: int = 0

    def __post_init__(self):
        tk = TransitionKind.parse(self.transition_kind)
        object.__setattr__(self, "transition_kind", tk)
        object.__setattr__(self, "reward_kind", RewardKind.parse(self.reward_kind))
        if self.n_states is None:
            object.__setattr__(self, "n_states", DEFAULT_STATES[tk])
        if self.n_states < 1:
            raise ValueError("n_states must be positive")
        if self.branching < 1:
            raise ValueError("branching must be positive")
        if tk is TransitionKind.GARNET and self.branching > self.n_states:
            raise ValueError(
                f"branching ({self.branching}) cannot exceed n_states ({self.n_states})"
            )
        if not self.reward_scale > 0:
            raise ValueError("reward_scale must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def env_id(self) -> str:
        parts = [self.transition_kind.value, self.reward_kind.value]
        if self.reward_kind is RewardKind.GAUSSIAN and self.reward_scale != 1.0:
            parts.append(f"sd{self.reward_scale:g}")
        parts.append(f"n{self.n_states}")
        parts.append(f"s{self.seed}")
        return "-".join(parts)

    def with_(self, **changes) -> "EnvSpec":
        return replace(self, **changes)


def _substream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(tag,)))


def _transition_matrix(spec: EnvSpec) -> np.ndarray:
    n = spec.n_states
    kind = spec.transition_kind
    if kind is TransitionKind.CYCLE:
        return np.roll(np.eye(n), 1, axis=1)
    rng = _substream(spec.seed, _TAG_TRANSITIONS)
    if kind is TransitionKind.DIRICHLET:
        P = rng.dirichlet(np.ones(n), size=n)
        # renormalise so rows sum to 1 well inside the 1e-12 tolerance
        return P / P.sum(axis=1, keepdims=True)
    P = np.zeros((n, n))
    for x in range(n):
        succ = rng.choice(n, size=spec.branching, replace=False)
        P[x, succ] = 1.0 / spec.branching
    return P


def reward_means(spec: EnvSpec) -> np.ndarray:
    return _substream(spec.seed, _TAG_REWARD_MEANS).standard_normal(spec.n_states)


def make_env(spec: EnvSpec) -> Mrp:
    means = reward_means(spec)
    rewards = tuple(RewardModel(spec.reward_kind, mu, spec.reward_scale) for mu in means)
    return Mrp(_transition_matrix(spec), rewards, spec.gamma, name=spec.env_id)


def suite_specs(seed: int = 0, reward_kinds=None, transition_kinds=None, gamma: float = 0.9):
    """The transition-structure x reward-family grid, all sharing ``seed``."""
    reward_kinds = reward_kinds or (
        RewardKind.POINT_MASS,
        RewardKind.GAUSSIAN,
        RewardKind.EXPONENTIAL,
        RewardKind.STUDENT_T2,
    )
    transition_kinds = transition_kinds or tuple(TransitionKind)
    return [
        EnvSpec(tk, rk, gamma=gamma, seed=seed)
        for tk in transition_kinds
        for rk in reward_kinds
    ]


def make_skewed_pair(skew: float, gamma: float = 0.9, p: float = SKEW_PROB) -> Mrp:
    """Three-state chain whose branch from state 0 has a rare large payoff.

    State 0 (reward 0) moves to state 1 with probability ``p`` and to state 2
    otherwise; state 1 pays ``skew / p`` and state 2 pays 0, both returning to
    state 0. The one-step target at state 0 therefore has mean contribution
    ``skew`` but median contribution 0. This is a stand-in instance chosen
    for strong skew, not a reconstruction of any published environment.
    """
    if skew < 0:
        raise ValueError("skew must be non-negative")
    if not 0.0 < p < 0.5:
        raise ValueError("p must lie in (0, 0.5) for the median to miss the payoff")
    P = np.array(
        [
            [0.0, p, 1.0 - p],
            [1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
        ]
    )
    rewards = (
        RewardModel.point_mass(0.0),
        RewardModel.point_mass(skew / p),
        RewardModel.point_mass(0.0),
    )
    return Mrp(P, rewards, gamma, name=f"skewed-k{skew:g}-p{p:g}")
