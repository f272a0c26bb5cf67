"""Online-training experiments: learning-rate sweeps, aggregation, ratios.

Each run gets its own counter-derived random stream keyed by
``(base_seed, lr_index, run_index)``, so results never depend on how cells
are scheduled. Stream layout per run (all open-interval uniforms):

* chain sampling: one draw for the start state, then per step the
  next-state draw followed by the reward draw;
* i.i.d. sampling: per step the state draw, the next-state draw and the
  reward draw.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .agents import pqtd_update, qtd_update_fast, td_update, value_from_quantiles
from .envs import EnvSpec, make_env, make_skewed_pair
from .mrp import Mrp, step, stationary_distribution, true_value
from .rewards import RewardKind, open_uniform, standard_quantile

N_LEARNING_RATES = 40
LR_RANGES = {"td": (5e-4, 1.0), "qtd": (5e-3, 10.0), "pqtd": (5e-3, 10.0)}
DEFAULT_CHECKPOINTS = (0, 10, 30, 100, 300, 1000, 3000, 10000)
DESK_RUNS = 200
PAPER_RUNS = 1000
# cap on (runs x steps) held in memory at once by the batched simulator
_CELLS_PER_CHUNK = 2_000_000


class Agent(str, enum.Enum):
    TD = "td"
    QTD = "qtd"
    PQTD = "pqtd"

    @classmethod
    def parse(cls, value):
        if isinstance(value, Agent):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown agent {value!r}") from None


_AGENT_CODES = {Agent.TD: _kernels.AGENT_TD, Agent.QTD: _kernels.AGENT_QTD, Agent.PQTD: _kernels.AGENT_PQTD}


def lr_grid(agent, n: int = N_LEARNING_RATES) -> np.ndarray:
    lo, hi = LR_RANGES[Agent.parse(agent).value]
    return np.geomspace(lo, hi, n)


@dataclass(frozen=True)
class SkewedSpec:
    """Parameters of the skewed-payoff surrogate environment."""

    skew: float = 1.0
    gamma: float = 0.9
    p: float = 0.1

    @property
    def env_id(self) -> str:
        return f"skewed-k{self.skew:g}-p{self.p:g}"


def build_env(spec) -> Mrp:
    if isinstance(spec, Mrp):
        return spec
    if isinstance(spec, SkewedSpec):
        return make_skewed_pair(spec.skew, spec.gamma, spec.p)
    return make_env(spec)


def env_id(spec) -> str:
    return spec.name if isinstance(spec, Mrp) else spec.env_id


@dataclass(frozen=True)
class ExperimentConfig:
    env: object
    agent: Agent
    m: int = 128
    lr_grid: tuple = ()
    n_updates: int = 1000
    checkpoints: tuple = (1000,)
    n_runs: int = DESK_RUNS
    base_seed: int = 0
    sampling: str = "chain"
    weighting: str = "uniform"

    def __post_init__(self):
        agent = Agent.parse(self.agent)
        object.__setattr__(self, "agent", agent)
        if agent is Agent.TD:
            object.__setattr__(self, "m", 1)
        grid = tuple(float(a) for a in (self.lr_grid if len(self.lr_grid) else lr_grid(agent)))
        object.__setattr__(self, "lr_grid", grid)
        object.__setattr__(self, "checkpoints", tuple(int(c) for c in self.checkpoints))
        if not grid:
            raise ValueError("learning-rate grid must be nonempty")
        if any(a <= 0 for a in grid) or list(grid) != sorted(grid):
            raise ValueError("learning rates must be positive and sorted ascending")
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.n_updates < 0 or self.n_runs < 1:
            raise ValueError("need n_updates >= 0 and n_runs >= 1")
        if not self.checkpoints or any(c < 0 or c > self.n_updates for c in self.checkpoints):
            raise ValueError("checkpoints must lie in [0, n_updates]")
        if list(self.checkpoints) != sorted(set(self.checkpoints)):
            raise ValueError("checkpoints must be strictly increasing")
        if self.sampling not in ("chain", "iid"):
            raise ValueError("sampling must be 'chain' or 'iid'")
        if self.weighting not in ("uniform", "stationary"):
            raise ValueError("weighting must be 'uniform' or 'stationary'")

    @property
    def env_id(self) -> str:
        return env_id(self.env)

    @property
    def label(self) -> str:
        return "TD" if self.agent is Agent.TD else f"{self.agent.value.upper()}({self.m})"

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def run_seed(base_seed: int, lr_index: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(lr_index), int(run_index)))


def _state_weights(mrp: Mrp, weighting: str) -> np.ndarray:
    if weighting == "stationary":
        return stationary_distribution(mrp)
    return np.full(mrp.n_states, 1.0 / mrp.n_states)


def _mse(v_hat, v_true, weights) -> float:
    if not np.all(np.isfinite(v_hat)):
        return math.inf
    # sequential sum, same order as the compiled simulator
    acc = 0.0
    for w, d in zip(weights.tolist(), (v_hat - v_true).tolist()):
        acc += w * d * d
    return acc


def run_single(
    mrp: Mrp,
    agent,
    m: int,
    lr: float,
    n_updates: int,
    checkpoints,
    seed,
    sampling: str = "chain",
    weighting: str = "uniform",
) -> list[tuple[int, float]]:
    """One training run driven by the per-transition update functions."""
    agent = Agent.parse(agent)
    rng = np.random.default_rng(seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed))
    n = mrp.n_states
    v_true = true_value(mrp)
    weights = _state_weights(mrp, weighting)
    table = np.zeros(n) if agent is Agent.TD else np.zeros((n, m))
    pending = sorted(int(c) for c in checkpoints)
    out = []
    x = None if sampling == "iid" else min(int(open_uniform(rng) * n), n - 1)
    with np.errstate(all="ignore"):
        for t in range(n_updates + 1):
            while pending and pending[0] == t:
                est = table if agent is Agent.TD else value_from_quantiles(table)
                out.append((pending.pop(0), _mse(est, v_true, weights)))
            if t == n_updates:
                break
            if sampling == "iid":
                x = min(int(open_uniform(rng) * n), n - 1)
            tr = step(mrp, x, rng)
            if agent is Agent.TD:
                table = td_update(table, tr, lr, mrp.gamma)
            elif agent is Agent.QTD:
                table = qtd_update_fast(table, tr, lr, mrp.gamma)
            else:
                table = pqtd_update(table, tr, lr, mrp.gamma)
            if sampling == "chain":
                x = tr.x_next
    return out


def _reward_slots(mrp: Mrp):
    kinds = sorted({r.kind for r in mrp.rewards}, key=lambda k: k.value)
    slot_of = {k: i for i, k in enumerate(kinds)}
    slots = np.array([slot_of[r.kind] for r in mrp.rewards], dtype=np.int64)
    scales = np.array([r.effective_scale for r in mrp.rewards])
    return kinds, slots, scales


def _simulate_cells(mrp: Mrp, cfg: ExperimentConfig, cells) -> np.ndarray:
    """MSE at each checkpoint for the given (lr_index, run_index) cells; shape (len(cells), n_ck)."""
    T = cfg.n_updates
    n = mrp.n_states
    C = len(cells)
    iid = cfg.sampling == "iid"
    per_step = 3 if iid else 2
    kinds, slots, scales = _reward_slots(mrp)
    start = np.zeros(C, dtype=np.int64)
    next_u = np.empty((C, T))
    reward_u = np.empty((C, T))
    state_u = np.empty((C, T)) if iid else np.empty((C, 0))
    for k, (li, ri) in enumerate(cells):
        rng = np.random.default_rng(run_seed(cfg.base_seed, li, ri))
        if iid:
            u = open_uniform(rng, per_step * T)
            state_u[k] = u[0::3]
            next_u[k] = u[1::3]
            reward_u[k] = u[2::3]
        else:
            u = open_uniform(rng, 1 + per_step * T)
            start[k] = min(int(u[0] * n), n - 1)
            next_u[k] = u[1::2]
            reward_u[k] = u[2::2]
    noise = np.empty((len(kinds), C, T))
    for i, kind in enumerate(kinds):
        noise[i] = standard_quantile(kind, reward_u)
    alphas = np.array([cfg.lr_grid[li] for li, _ in cells])
    if not iid:
        state_u = np.empty((C, 1))
    return _kernels.run_chains(
        _AGENT_CODES[cfg.agent],
        cfg.m,
        mrp.gamma,
        np.ascontiguousarray(mrp.cum_transition),
        mrp.mean_rewards,
        scales,
        slots,
        noise,
        start,
        next_u,
        state_u,
        iid,
        alphas,
        np.asarray(cfg.checkpoints, dtype=np.int64),
        true_value(mrp),
        _state_weights(mrp, cfg.weighting),
    )


def _simulate_job(args):
    mrp_dict, cfg, cells = args
    return _simulate_cells(Mrp.from_dict(mrp_dict), cfg, cells)


@dataclass
class SweepSummary:
    """Per (learning rate, checkpoint) MSE statistics across runs."""

    env_id: str
    agent: str
    m: int
    lr_grid: np.ndarray
    checkpoints: tuple
    mse_mean: np.ndarray
    mse_stderr: np.ndarray
    n_runs: int
    n_diverged: np.ndarray = field(default=None)

    def __post_init__(self):
        self.lr_grid = np.asarray(self.lr_grid, dtype=float)
        self.checkpoints = tuple(int(c) for c in self.checkpoints)
        if self.n_diverged is None:
            self.n_diverged = np.zeros(self.mse_mean.shape, dtype=np.int64)

    def column(self, checkpoint: int) -> int:
        try:
            return self.checkpoints.index(int(checkpoint))
        except ValueError:
            raise KeyError(f"checkpoint {checkpoint} was not recorded") from None

    @property
    def label(self) -> str:
        return "TD" if self.agent == "td" else f"{self.agent.upper()}({self.m})"

    @property
    def total_diverged(self) -> int:
        return int(self.n_diverged.sum())


def aggregate(mse: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, standard error and divergence count over axis 0 (runs)."""
    n = mse.shape[0]
    finite = np.isfinite(mse)
    n_div = (~finite).sum(axis=0)
    with np.errstate(invalid="ignore", over="ignore"):
        mean = np.mean(mse, axis=0)
        if n > 1:
            se = np.std(mse, axis=0, ddof=1) / math.sqrt(n)
        else:
            se = np.zeros(mse.shape[1:])
    mean = np.where(n_div > 0, math.inf, mean)
    se = np.where(n_div > 0, math.inf, se)
    return mean, se, n_div


def sweep(cfg: ExperimentConfig, jobs: int = 1, mrp: Mrp | None = None) -> SweepSummary:
    mrp = build_env(cfg.env) if mrp is None else mrp
    L, R = len(cfg.lr_grid), cfg.n_runs
    cells = [(li, ri) for li in range(L) for ri in range(R)]
    chunk = max(1, _CELLS_PER_CHUNK // max(cfg.n_updates, 1))
    batches = [cells[i : i + chunk] for i in range(0, len(cells), chunk)]
    if jobs > 1 and len(batches) > 1:
        payload = [(mrp.to_dict(), cfg, b) for b in batches]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_simulate_job, payload))
    else:
        parts = [_simulate_cells(mrp, cfg, b) for b in batches]
    mse = np.concatenate(parts, axis=0).reshape(L, R, len(cfg.checkpoints))
    means, ses, divs = zip(*(aggregate(mse[li]) for li in range(L)))
    return SweepSummary(
        env_id=cfg.env_id,
        agent=cfg.agent.value,
        m=cfg.m,
        lr_grid=np.array(cfg.lr_grid),
        checkpoints=cfg.checkpoints,
        mse_mean=np.array(means),
        mse_stderr=np.array(ses),
        n_runs=R,
        n_diverged=np.array(divs),
    )


def optimal_mse(summary: SweepSummary, checkpoint: int) -> tuple[float, float, float]:
    """(lr, mean MSE, stderr) at the grid minimiser; ties go to the smaller lr."""
    col = summary.column(checkpoint)
    means = summary.mse_mean[:, col]
    if not np.any(np.isfinite(means)):
        raise ValueError(f"every learning rate diverged at checkpoint {checkpoint}")
    i = int(np.argmin(means))
    return float(summary.lr_grid[i]), float(means[i]), float(summary.mse_stderr[i, col])


def optimal_lr_band(summary: SweepSummary, checkpoint: int) -> tuple[float, float]:
    """Learning rates whose lower MSE band edge undercuts the optimum's upper edge."""
    col = summary.column(checkpoint)
    _, best, best_se = optimal_mse(summary, checkpoint)
    lower = summary.mse_mean[:, col] - 2.0 * summary.mse_stderr[:, col]
    ok = np.flatnonzero(lower < best + 2.0 * best_se)
    return float(summary.lr_grid[ok.min()]), float(summary.lr_grid[ok.max()])


@dataclass
class ImprovementCurve:
    """Optimal-MSE ratio (a / b) per checkpoint with both argmin learning rates."""

    env_id: str
    label_a: str
    label_b: str
    checkpoints: tuple
    ratio: np.ndarray
    ratio_stderr: np.ndarray
    optimal_lr_a: np.ndarray
    optimal_lr_b: np.ndarray
    mse_a: np.ndarray
    mse_b: np.ndarray


def improvement_from_summaries(a: SweepSummary, b: SweepSummary) -> ImprovementCurve:
    cks = tuple(c for c in a.checkpoints if c in b.checkpoints)
    rows = []
    for c in cks:
        lr_a, ma, sa = optimal_mse(a, c)
        lr_b, mb, sb = optimal_mse(b, c)
        if mb == 0.0:
            ratio = math.inf if ma > 0 else 1.0
            se = math.inf
        else:
            ratio = ma / mb
            # delta method; the two sweeps are treated as independent
            rel = math.hypot(sa / ma, sb / mb) if ma > 0 else 0.0
            se = ratio * rel
        rows.append((ratio, se, lr_a, lr_b, ma, mb))
    arr = np.array(rows, dtype=float).reshape(len(cks), 6)
    return ImprovementCurve(
        env_id=a.env_id,
        label_a=a.label,
        label_b=b.label,
        checkpoints=cks,
        ratio=arr[:, 0],
        ratio_stderr=arr[:, 1],
        optimal_lr_a=arr[:, 2],
        optimal_lr_b=arr[:, 3],
        mse_a=arr[:, 4],
        mse_b=arr[:, 5],
    )


def improvement_curve(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig, jobs: int = 1) -> ImprovementCurve:
    if cfg_a.env != cfg_b.env:
        raise ValueError("improvement curves need matched environments")
    mrp = build_env(cfg_a.env)
    a = sweep(cfg_a, jobs=jobs, mrp=mrp)
    b = a if cfg_b == cfg_a else sweep(cfg_b, jobs=jobs, mrp=mrp)
    return improvement_from_summaries(a, b)


def reward_scale_sweep(
    base: EnvSpec, sigmas, cfg_a: ExperimentConfig, cfg_b: ExperimentConfig, jobs: int = 1
) -> list[tuple[float, ImprovementCurve]]:
    """Improvement curves on matched structures differing only in Gaussian reward scale."""
    if base.reward_kind is not RewardKind.GAUSSIAN:
        raise ValueError("reward-scale sweeps need Gaussian rewards")
    out = []
    for sigma in sigmas:
        env = base.with_(reward_scale=float(sigma))
        out.append((float(sigma), improvement_curve(cfg_a.with_(env=env), cfg_b.with_(env=env), jobs=jobs)))
    return out


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("QTDLAB_JOBS", "1")))
    except ValueError:
        return 1
