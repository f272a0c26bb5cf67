import math

import numpy as np
import pytest

from qtdlab import harness
from qtdlab.envs import EnvSpec, make_env
from qtdlab.harness import (
    Agent,
    ExperimentConfig,
    SkewedSpec,
    SweepSummary,
    aggregate,
    improvement_curve,
    improvement_from_summaries,
    lr_grid,
    optimal_lr_band,
    optimal_mse,
    reward_scale_sweep,
    run_seed,
    run_single,
    sweep,
)
from qtdlab.mrp import mc_horizon, true_value

SMALL = EnvSpec("garnet", "t2", n_states=6, branching=3, seed=1)


def synthetic(lrs, means, ses=None, cks=(1000,)):
    means = np.asarray(means, float).reshape(len(lrs), len(cks))
    ses = np.zeros_like(means) if ses is None else np.asarray(ses, float).reshape(means.shape)
    return SweepSummary("env", "qtd", 4, np.array(lrs), cks, means, ses, 10)


def test_lr_grids():
    for agent, (lo, hi) in (("td", (5e-4, 1.0)), ("qtd", (5e-3, 10.0)), ("pqtd", (5e-3, 10.0))):
        g = lr_grid(agent)
        assert g.size == 40
        assert g[0] == pytest.approx(lo, rel=1e-12) and g[-1] == pytest.approx(hi, rel=1e-12)
        ratios = g[1:] / g[:-1]
        assert np.allclose(ratios, (hi / lo) ** (1 / 39), rtol=1e-12)


@pytest.mark.parametrize("agent", list(Agent))
@pytest.mark.parametrize("sampling", ["chain", "iid"])
def test_batched_simulator_matches_reference_runs(agent, sampling):
    mrp = make_env(SMALL)
    cfg = ExperimentConfig(SMALL, agent, m=5, lr_grid=(0.05, 0.7), n_updates=300, checkpoints=(0, 10, 300), n_runs=3, sampling=sampling)
    cells = [(0, 0), (1, 2), (0, 1)]
    batched = harness._simulate_cells(mrp, cfg, cells)
    for k, (li, ri) in enumerate(cells):
        ref = run_single(mrp, agent, cfg.m, cfg.lr_grid[li], 300, cfg.checkpoints, run_seed(0, li, ri), sampling)
        assert np.array_equal(batched[k], [v for _, v in ref])


def test_batched_simulator_matches_reference_stationary_weighting():
    env = EnvSpec("dirichlet", "exponential", n_states=5, seed=2)
    mrp = make_env(env)
    cfg = ExperimentConfig(env, Agent.QTD, m=16, lr_grid=(0.3,), n_updates=200, checkpoints=(200,), n_runs=2, weighting="stationary")
    batched = harness._simulate_cells(mrp, cfg, [(0, 1)])
    ref = run_single(mrp, Agent.QTD, 16, 0.3, 200, (200,), run_seed(0, 0, 1), weighting="stationary")
    assert batched[0, 0] == ref[0][1]


def test_td_exact_on_deterministic_cycle():
    env = EnvSpec("cycle", "pointmass")
    mrp = make_env(env)
    T = mrp.n_states * mc_horizon(0.9)
    out = run_single(mrp, Agent.TD, 1, 1.0, T, (T,), 5)
    assert out[0][1] < 1e-6


def test_zero_updates_gives_value_norm():
    mrp = make_env(SMALL)
    out = run_single(mrp, Agent.QTD, 4, 0.1, 0, (0,), 1)
    assert out[0][1] == pytest.approx(np.mean(true_value(mrp) ** 2), rel=1e-14)


def test_checkpoint_counts_exact_updates():
    # MSE at checkpoint c of a long run equals the final MSE of a run stopped at c
    mrp = make_env(SMALL)
    long = dict(run_single(mrp, Agent.TD, 1, 0.2, 50, (0, 7, 50), 3))
    short = dict(run_single(mrp, Agent.TD, 1, 0.2, 7, (7,), 3))
    assert long[7] == short[7]


def test_run_single_deterministic():
    mrp = make_env(SMALL)
    a = run_single(mrp, Agent.PQTD, 8, 0.5, 100, (50, 100), 11)
    b = run_single(mrp, Agent.PQTD, 8, 0.5, 100, (50, 100), 11)
    assert a == b


def test_sweep_independent_of_jobs_and_chunking(monkeypatch):
    cfg = ExperimentConfig(SMALL, Agent.QTD, m=4, lr_grid=(0.1, 1.0, 3.0), n_updates=100, checkpoints=(10, 100), n_runs=7)
    base = sweep(cfg, jobs=1)
    monkeypatch.setattr(harness, "_CELLS_PER_CHUNK", 300)
    chunked = sweep(cfg, jobs=1)
    parallel = sweep(cfg, jobs=2)
    for other in (chunked, parallel):
        assert np.array_equal(base.mse_mean, other.mse_mean)
        assert np.array_equal(base.mse_stderr, other.mse_stderr)


def test_single_run_has_zero_stderr():
    s = sweep(ExperimentConfig(SMALL, Agent.TD, lr_grid=(0.1,), n_updates=20, checkpoints=(20,), n_runs=1))
    assert s.mse_stderr[0, 0] == 0.0


def test_stderr_shrinks_with_runs():
    cfg = ExperimentConfig(SMALL, Agent.TD, lr_grid=(0.1,), n_updates=100, checkpoints=(100,), n_runs=100)
    se_small = sweep(cfg).mse_stderr[0, 0]
    se_big = sweep(cfg.with_(n_runs=400)).mse_stderr[0, 0]
    # quadrupling the runs halves the standard error, up to sampling noise
    assert 1.5 < se_small / se_big < 2.7


def test_divergence_is_counted_not_dropped():
    env = EnvSpec("cycle", "gaussian", n_states=4)
    cfg = ExperimentConfig(env, Agent.TD, lr_grid=(0.5, 1e6), n_updates=400, checkpoints=(0, 400), n_runs=5)
    s = sweep(cfg)
    assert s.n_diverged[1, 1] == 5 and s.n_diverged[0, 1] == 0
    assert math.isinf(s.mse_mean[1, 1])
    assert s.total_diverged == 5
    assert optimal_mse(s, 400)[0] == 0.5


def test_aggregate_flags_infinite_runs():
    mse = np.array([[1.0, 2.0], [3.0, np.inf]])
    mean, se, div = aggregate(mse)
    assert mean[0] == 2.0 and math.isinf(mean[1]) and list(div) == [0, 1]


def test_optimal_mse_rules():
    assert optimal_mse(synthetic([0.5], [2.0]), 1000)[0] == 0.5
    assert optimal_mse(synthetic([0.1, 0.3, 1.0], [3.0, 1.0, 2.0]), 1000)[:2] == (0.3, 1.0)
    assert optimal_mse(synthetic([0.1, 0.3, 1.0], [2.0, 1.0, 1.0]), 1000)[0] == 0.3
    with pytest.raises(ValueError):
        optimal_mse(synthetic([0.1, 0.3], [np.inf, np.inf]), 1000)
    with pytest.raises(KeyError):
        optimal_mse(synthetic([0.1], [1.0]), 10)


def test_optimal_lr_band():
    s = synthetic([0.1, 0.3, 1.0, 3.0], [5.0, 1.1, 1.0, 4.0], [0.1, 0.05, 0.05, 0.1])
    assert optimal_lr_band(s, 1000) == (0.3, 1.0)


def test_improvement_identity():
    cfg = ExperimentConfig(SMALL, Agent.QTD, m=4, lr_grid=(0.1, 1.0), n_updates=50, checkpoints=(10, 50), n_runs=5)
    c = improvement_curve(cfg, cfg)
    assert np.all(c.ratio == 1.0)


def test_improvement_ratio_values():
    a = synthetic([0.1, 1.0], [4.0, 2.0], [0.2, 0.1])
    b = synthetic([0.1, 1.0], [1.0, 3.0], [0.1, 0.1])
    c = improvement_from_summaries(a, b)
    assert c.ratio[0] == 2.0
    assert c.optimal_lr_a[0] == 1.0 and c.optimal_lr_b[0] == 0.1
    assert c.ratio_stderr[0] == pytest.approx(2.0 * math.hypot(0.1 / 2.0, 0.1 / 1.0))


def test_improvement_needs_matched_envs():
    a = ExperimentConfig(SMALL, Agent.QTD, m=2, n_updates=10, checkpoints=(10,), n_runs=2)
    with pytest.raises(ValueError):
        improvement_curve(a, a.with_(env=SMALL.with_(seed=9)))


def test_reward_scale_sweep_identical_sigmas():
    base = EnvSpec("cycle", "gaussian", n_states=4)
    q = ExperimentConfig(base, Agent.QTD, m=4, lr_grid=(0.1, 1.0), n_updates=60, checkpoints=(60,), n_runs=6)
    t = ExperimentConfig(base, Agent.TD, lr_grid=(0.1, 1.0), n_updates=60, checkpoints=(60,), n_runs=6)
    (s1, c1), (s2, c2) = reward_scale_sweep(base, [0.5, 0.5], q, t)
    assert s1 == s2 and np.array_equal(c1.ratio, c2.ratio)
    with pytest.raises(ValueError):
        reward_scale_sweep(EnvSpec("cycle", "t2"), [1.0], q, t)


def test_skewed_env_runs():
    cfg = ExperimentConfig(SkewedSpec(), Agent.QTD, m=2, lr_grid=(0.5,), n_updates=30, checkpoints=(30,), n_runs=3)
    s = sweep(cfg)
    assert s.env_id == "skewed-k1-p0.1" and np.isfinite(s.mse_mean).all()


@pytest.mark.parametrize(
    "kw",
    [
        dict(checkpoints=(2000,)),
        dict(checkpoints=(10, 5)),
        dict(lr_grid=(1.0, 0.1)),
        dict(lr_grid=(-0.1,)),
        dict(n_runs=0),
        dict(m=0, agent=Agent.QTD),
        dict(sampling="restart"),
        dict(weighting="visits"),
    ],
)
def test_config_validation(kw):
    base = dict(env=SMALL, agent=Agent.TD)
    base.update(kw)
    with pytest.raises(ValueError):
        ExperimentConfig(**base)


def test_td_ignores_m_and_default_grid():
    cfg = ExperimentConfig(SMALL, "td", m=64)
    assert cfg.m == 1 and len(cfg.lr_grid) == 40 and cfg.label == "TD"
    assert ExperimentConfig(SMALL, "qtd", m=128).label == "QTD(128)"
