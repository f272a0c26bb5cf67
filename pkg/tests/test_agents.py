import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from qtdlab.agents import (
    expected_increments,
    pqtd_expected_update,
    pqtd_increments,
    pqtd_update,
    qtd_expected_update,
    qtd_increments,
    qtd_increments_fast,
    qtd_update,
    qtd_update_fast,
    quantile_levels,
    td_update,
    update_profile,
    value_from_quantiles,
)
from qtdlab.dp import qdp_fixed_point
from qtdlab.envs import EnvSpec, make_env
from qtdlab.mrp import Mrp, Transition
from qtdlab.rewards import RewardModel


def reference_qtd(theta, t, alpha, gamma, order=None):
    """Scalar transcription of the QTD update: buffered writes, any i order."""
    m = theta.shape[1]
    tau = [(2 * i + 1) / (2 * m) for i in range(m)]
    new = theta.copy()
    for i in order if order is not None else range(m):
        below = sum(1 for j in range(m) if t.r + gamma * theta[t.x_next, j] < theta[t.x, i])
        new[t.x, i] = theta[t.x, i] + alpha * (tau[i] - below / m)
    return new


# -- levels and value extraction ---------------------------------------------


def test_levels():
    tau = quantile_levels(4)
    assert np.array_equal(tau, [0.125, 0.375, 0.625, 0.875])
    for m in (1, 7, 128):
        t = quantile_levels(m)
        assert np.all(np.diff(t) > 0)
        assert np.array_equal(t + t[::-1], np.ones(m))
    with pytest.raises(ValueError):
        quantile_levels(0)


def test_value_from_quantiles():
    assert value_from_quantiles(np.array([[1.0, 2.0, 3.0, 4.0]]))[0] == 2.5
    assert np.all(value_from_quantiles(np.full((3, 5), -1.5)) == -1.5)
    for m in range(1, 257):
        assert value_from_quantiles(quantile_levels(m)[None, :])[0] == 0.5


def test_value_is_correctly_rounded():
    import math

    rng = np.random.default_rng(9)
    for _ in range(500):
        row = rng.standard_t(1, size=int(rng.integers(1, 200))) * 10.0 ** rng.integers(-20, 20)
        want = math.fsum(row) / row.size
        assert value_from_quantiles(row) == want
        assert value_from_quantiles(rng.permutation(row)) == want
    assert value_from_quantiles(np.array([np.inf, 1.0])) == np.inf
    assert value_from_quantiles(np.zeros((2, 3, 4))).shape == (2, 3)


# -- TD -----------------------------------------------------------------------


def test_td_examples():
    v = np.zeros(3)
    assert td_update(v, Transition(1, 1.0, 2), 1.0, 0.9)[1] == 1.0
    v = np.array([2.0, 10.0])
    out = td_update(v, Transition(0, 0.0, 1), 0.5, 0.9)
    assert out[0] == pytest.approx(5.5) and out[1] == 10.0
    assert np.array_equal(td_update(v, Transition(0, 3.0, 1), 0.0, 0.9), v)
    assert np.array_equal(v, [2.0, 10.0])


@settings(max_examples=200, deadline=None)
@given(
    v=hnp.arrays(float, 4, elements=st.floats(-1e3, 1e3)),
    r=st.floats(-1e3, 1e3),
    alpha=st.floats(0, 1),
    x=st.integers(0, 3),
    xn=st.integers(0, 3),
)
def test_td_affine_form(v, r, alpha, x, xn):
    out = td_update(v, Transition(x, r, xn), alpha, 0.9)
    assert out[x] == pytest.approx((1 - alpha) * v[x] + alpha * (r + 0.9 * v[xn]), rel=1e-9, abs=1e-9)
    others = np.arange(4) != x
    assert np.array_equal(out[others], v[others])


# -- QTD ----------------------------------------------------------------------


def test_qtd_hand_example():
    # target r + gamma * 0 = 1 sits above both estimates, no indicator fires
    theta = np.zeros((2, 2))
    a = 0.1
    out = qtd_update(theta, Transition(0, 1.0, 1), a, 0.9)
    assert out[0] == pytest.approx([0.25 * a, 0.75 * a])
    assert np.array_equal(out[1], [0.0, 0.0])


def test_qtd_all_below_gives_tau_minus_one():
    theta = np.zeros((2, 2))
    out = qtd_update(theta, Transition(0, -1.0, 1), 1.0, 0.9)
    assert np.array_equal(out[0], [0.25 - 1.0, 0.75 - 1.0])


def test_qtd_zero_alpha_is_identity():
    theta = np.random.default_rng(0).normal(size=(3, 5))
    assert np.array_equal(qtd_update(theta, Transition(1, 0.3, 2), 0.0, 0.9), theta)


def test_qtd_matches_scalar_reference_in_any_order():
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = int(rng.integers(1, 12))
        theta = rng.normal(size=(3, m)).round(1)
        x = int(rng.integers(3))
        t = Transition(x, round(float(rng.normal()), 1), x if rng.random() < 0.5 else int(rng.integers(3)))
        want = qtd_update(theta, t, 0.3, 0.5)
        for order in (range(m), range(m - 1, -1, -1), rng.permutation(m)):
            assert np.array_equal(reference_qtd(theta, t, 0.3, 0.5, order), want)


def _tied_instance(rng):
    m = int(rng.integers(1, 40))
    n = 3
    grid = rng.integers(-4, 5, size=(n, m)) * 0.5
    theta = grid.astype(float)
    x, xn = int(rng.integers(n)), int(rng.integers(n))
    gamma = float(rng.choice([0.0, 0.5, 0.9, 1.0 - 2**-10]))
    if rng.random() < 0.5:
        # force exact ties: theta(x, i) = r + gamma * theta(x', j)
        r = float(rng.integers(-2, 3) * 0.5)
        j = rng.integers(m, size=m)
        theta[x] = r + gamma * theta[xn, j]
        if x == xn:
            theta[xn] = theta[x]
    else:
        r = float(rng.normal())
        if rng.random() < 0.3:
            theta *= 10.0 ** rng.integers(-12, 13)
    return theta, Transition(x, r, xn), gamma


def test_naive_and_fast_agree_bitwise_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        theta, t, gamma = _tied_instance(rng)
        alpha = float(rng.choice([1e-3, 0.1, 1.0, 10.0]))
        a = qtd_increments(theta, t, alpha, gamma)
        b = qtd_increments_fast(theta, t, alpha, gamma)
        assert np.array_equal(a, b)
        assert np.array_equal(qtd_update(theta, t, alpha, gamma), qtd_update_fast(theta, t, alpha, gamma))


def test_ties_do_not_count():
    # theta(x, 0) equals the target exactly and must not register as above it
    theta = np.array([[1.0], [0.0]])
    inc = qtd_increments(theta, Transition(0, 1.0, 1), 1.0, 0.9)
    assert inc[0] == 0.5
    assert qtd_increments_fast(theta, Transition(0, 1.0, 1), 1.0, 0.9)[0] == 0.5


@settings(max_examples=300, deadline=None)
@given(
    theta=hnp.arrays(float, (2, 6), elements=st.floats(-1e12, 1e12)),
    r=st.floats(-1e12, 1e12),
    alpha=st.floats(0, 10),
)
def test_qtd_increment_bounded(theta, r, alpha):
    inc = qtd_increments_fast(theta, Transition(0, r, 1), alpha, 0.9)
    tau = quantile_levels(6)
    assert np.all(np.abs(inc) <= alpha * np.maximum(tau, 1 - tau))


# -- PQTD ---------------------------------------------------------------------


def test_pqtd_hand_example():
    theta = np.zeros((2, 2))
    a = 0.2
    out = pqtd_update(theta, Transition(0, 1.0, 1), a, 0.9)
    assert out[0] == pytest.approx([0.25 * a, 0.75 * a])
    out = pqtd_update(theta, Transition(0, -1.0, 1), a, 0.9)
    assert out[0] == pytest.approx([(0.25 - 1) * a, (0.75 - 1) * a])
    assert np.array_equal(pqtd_update(theta, Transition(0, 5.0, 1), 0.0, 0.9), theta)


def test_pqtd_increment_support():
    rng = np.random.default_rng(3)
    for _ in range(2000):
        m = int(rng.integers(1, 20))
        theta = rng.standard_t(2, size=(3, m))
        alpha = float(rng.uniform(0, 5))
        t = Transition(int(rng.integers(3)), float(rng.standard_t(2)), int(rng.integers(3)))
        inc = pqtd_increments(theta, t, alpha, 0.9)
        tau = quantile_levels(m)
        assert np.all((inc == alpha * tau) | (inc == alpha * (tau - 1)))


# -- expected updates ---------------------------------------------------------


def test_expected_update_zero_discount_example():
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    mrp = Mrp(P, (RewardModel.point_mass(1.0), RewardModel.point_mass(2.0)), 0.0)
    d = qtd_expected_update(mrp, np.zeros((2, 1)), 0, 0)
    assert d.expected_update == 0.5
    assert d.noise_variance == 0.0


def test_expected_update_matches_monte_carlo():
    mrp = make_env(EnvSpec("garnet", "exponential", n_states=6, branching=3, seed=1))
    theta = np.random.default_rng(4).normal(size=(6, 4))
    exact = expected_increments(mrp, theta, 2)
    exp, noise = update_profile(mrp, theta, "qtd", n=200_000, seed=1)
    assert np.allclose(exp[2], exact)
    # sample mean of the per-unit increments is the exact expectation up to MC error
    from qtdlab.agents import sampled_increments

    draws = sampled_increments(mrp, theta, 2, np.random.default_rng(5), 200_000)
    se = draws.std(axis=0) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - exact) <= 5 * se + 1e-12)


def test_diagnostics_bounded():
    mrp = make_env(EnvSpec("dirichlet", "t2", n_states=5, seed=2))
    rng = np.random.default_rng(6)
    for algo in ("qtd", "pqtd"):
        theta = rng.normal(scale=100, size=(5, 8))
        exp, noise = update_profile(mrp, theta, algo, n=2000)
        assert np.all(np.abs(exp) <= 1) and np.all(noise <= 1) and np.all(noise >= 0)
    d = pqtd_expected_update(mrp, theta, 1, 3, n=500)
    assert abs(d.expected_update) <= 1 and 0 <= d.noise_variance <= 1


def test_expected_update_vanishes_at_fixed_point():
    mrp = make_env(EnvSpec("garnet", "gaussian", n_states=8, branching=3, seed=3))
    fp = qdp_fixed_point(mrp, 8)
    exp, _ = update_profile(mrp, fp.theta, "qtd", n=100)
    assert np.max(np.abs(exp)) < 1e-8
