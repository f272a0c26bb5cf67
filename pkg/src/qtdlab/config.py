"""Experiment configuration files.

A config is an INI file with one ``[sweep]`` section of shared run settings,
one or more ``[env NAME]`` sections and one or more ``[agent NAME]`` sections.
``run-sweep`` executes every (env, agent) pair::

    [sweep]
    n_updates = 1000
    checkpoints = 0, 10, 30, 100, 300, 1000
    n_runs = 200
    base_seed = 0
    sampling = chain          ; chain | iid
    weighting = uniform       ; uniform | stationary

    [env dirichlet-gauss]
    kind = dirichlet          ; dirichlet | garnet | cycle | skewed
    rewards = gaussian        ; pointmass | gaussian | exponential | t2
    n_states = 20
    branching = 6
    reward_scale = 1.0
    gamma = 0.9
    seed = 0

    [agent qtd128]
    agent = qtd               ; td | qtd | pqtd
    m = 128
    lr_grid = default         ; default | geom LO HI N | comma list

Skewed environments take ``skew`` and ``p`` instead of the structure keys.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec
from .harness import DEFAULT_CHECKPOINTS, DESK_RUNS, Agent, ExperimentConfig, SkewedSpec


class ConfigError(ValueError):
    """A config file that cannot be turned into experiments."""


_ENV_KEYS = {"kind", "rewards", "n_states", "branching", "reward_scale", "gamma", "seed", "skew", "p"}
_AGENT_KEYS = {"agent", "m", "lr_grid"}
_SWEEP_KEYS = {"n_updates", "checkpoints", "n_runs", "base_seed", "sampling", "weighting"}


@dataclass(frozen=True)
class SweepPlan:
    envs: dict
    agents: dict
    shared: dict

    def experiments(self):
        """(env name, agent name, ExperimentConfig) for every pair, in file order."""
        for en, env in self.envs.items():
            for an, agent in self.agents.items():
                yield en, an, ExperimentConfig(env=env, **agent, **self.shared)


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        head = re.match(r"\[(.+)\]$", s)
        if head:
            current = head.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return no
    return None


def _fail(text, section, key, msg):
    no = _line_of(text, section, key)
    where = f"line {no}: " if no else ""
    field = f"[{section}] {key}" if key else f"[{section}]"
    raise ConfigError(f"{where}{field}: {msg}")


def parse_lr_grid(value: str, agent: Agent) -> tuple:
    v = value.strip().lower()
    if v in ("", "default"):
        return ()
    if v.startswith("geom"):
        parts = v.split()[1:]
        if len(parts) != 3:
            raise ValueError("expected 'geom LO HI N'")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ValueError("empty learning-rate grid")
        return tuple(np.geomspace(lo, hi, n).tolist())
    grid = tuple(float(p) for p in v.split(",") if p.strip())
    if not grid:
        raise ValueError("empty learning-rate grid")
    return grid


def _int_list(value: str) -> tuple:
    return tuple(int(p) for p in value.split(",") if p.strip())


def _env_from(section, get):
    kind = get("kind").lower()
    if kind == "skewed":
        return SkewedSpec(skew=float(get("skew", "1.0")), gamma=float(get("gamma", "0.9")), p=float(get("p", "0.1")))
    n = get("n_states", "")
    return EnvSpec(
        transition_kind=kind,
        reward_kind=get("rewards"),
        n_states=int(n) if n else None,
        branching=int(get("branching", "6")),
        reward_scale=float(get("reward_scale", "1.0")),
        gamma=float(get("gamma", "0.9")),
        seed=int(get("seed", "0")),
    )


def loads(text: str) -> SweepPlan:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    envs, agents, shared = {}, {}, {}
    for name in cp.sections():
        sec = cp[name]
        head, _, label = name.partition(" ")
        label = label.strip()
        allowed = {"env": _ENV_KEYS, "agent": _AGENT_KEYS, "sweep": _SWEEP_KEYS}.get(head)
        if allowed is None:
            _fail(text, name, None, "unknown section (expected sweep, env NAME or agent NAME)")
        for key in sec:
            if key not in allowed:
                _fail(text, name, key, "unknown field")

        def get(key, default=None, sec=sec, name=name):
            if key in sec:
                return sec[key]
            if default is None:
                _fail(text, name, None, f"missing required field '{key}'")
            return default

        current = None
        try:
            if head == "env":
                current = "kind"
                envs[label or "env"] = _env_from(name, get)
            elif head == "agent":
                current = "agent"
                agent = Agent.parse(get("agent"))
                current = "lr_grid"
                grid = parse_lr_grid(get("lr_grid", "default"), agent)
                current = "m"
                agents[label or "agent"] = {"agent": agent, "m": int(get("m", "128")), "lr_grid": grid}
            else:
                for key in sec:
                    current = key
                    if key == "checkpoints":
                        shared[key] = _int_list(sec[key])
                    elif key in ("sampling", "weighting"):
                        shared[key] = sec[key].strip().lower()
                    else:
                        shared[key] = int(sec[key])
        except ConfigError:
            raise
        except ValueError as exc:
            _fail(text, name, current if current in sec else None, str(exc))
    if not envs:
        raise ConfigError("no [env NAME] section")
    if not agents:
        raise ConfigError("no [agent NAME] section")
    shared.setdefault("n_updates", 1000)
    shared.setdefault("checkpoints", tuple(c for c in DEFAULT_CHECKPOINTS if c <= shared["n_updates"]))
    shared.setdefault("n_runs", DESK_RUNS)
    plan = SweepPlan(envs, agents, shared)
    # validate every combination up front so errors surface before any run
    for en, an in ((e, a) for e in envs for a in agents):
        try:
            ExperimentConfig(env=envs[en], **agents[an], **shared)
        except ValueError as exc:
            raise ConfigError(f"[env {en}] x [agent {an}]: {exc}") from None
    return plan


def load(path) -> SweepPlan:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
