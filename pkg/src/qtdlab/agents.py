"""Incremental learners: TD(0), QTD(m) and PQTD(m).

Value tables are float arrays of shape ``(n_states,)``; quantile tables are
arrays of shape ``(n_states, m)``. Update functions return new arrays and
leave their inputs untouched.

All quantile indicators use the quantile-regression convention
``1[target < theta(x, i)]`` with a strict inequality, where
``target = r + gamma * bootstrap``. Ties never fire.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mrp import Mrp, Transition
from .rewards import open_uniform


def quantile_levels(m: int) -> np.ndarray:
    """Midpoint levels ``(2i - 1) / (2m)`` for ``i = 1..m``."""
    if m < 1:
        raise ValueError("m must be positive")
    return (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)


def zeros_table(n_states: int, m: int) -> np.ndarray:
    return np.zeros((n_states, m))


def value_from_quantiles(theta: np.ndarray) -> np.ndarray:
    """Average over the last axis, correctly rounded and independent of order."""
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.ndim == 1:
        return np.float64(_kernels.row_mean(theta))
    flat = theta.reshape(-1, theta.shape[-1])
    return _kernels.rows_mean(flat).reshape(theta.shape[:-1])


# -- TD(0) ------------------------------------------------------------------


def td_update(v: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    out[t.x] = v[t.x] + alpha * (t.r + gamma * v[t.x_next] - v[t.x])
    return out


# -- QTD(m) -----------------------------------------------------------------


def qtd_increments(theta: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    """The m increments QTD applies to row ``t.x`` (direct double loop, O(m^2))."""
    m = theta.shape[1]
    tau = quantile_levels(m)
    row = theta[t.x]
    targets = t.r + gamma * theta[t.x_next]
    # every indicator reads the pre-update table
    counts = np.array([np.count_nonzero(targets < row[i]) for i in range(m)])
    return alpha * (tau - counts / m)


def qtd_increments_fast(theta: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    """Same increments via one sort and a binary search per quantile, O(m log m)."""
    m = theta.shape[1]
    tau = quantile_levels(m)
    # r + gamma * sorted(theta') is itself sorted: rounding is monotone
    targets = t.r + gamma * np.sort(theta[t.x_next])
    counts = np.searchsorted(targets, theta[t.x], side="left")
    return alpha * (tau - counts / m)


def qtd_update(theta: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    inc = qtd_increments(theta, t, alpha, gamma)
    out = np.array(theta, dtype=float, copy=True)
    out[t.x] = theta[t.x] + inc
    return out


def qtd_update_fast(theta: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    inc = qtd_increments_fast(theta, t, alpha, gamma)
    out = np.array(theta, dtype=float, copy=True)
    out[t.x] = theta[t.x] + inc
    return out


# -- PQTD(m) ----------------------------------------------------------------


def pqtd_increments(theta: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    m = theta.shape[1]
    tau = quantile_levels(m)
    target = t.r + gamma * value_from_quantiles(theta[t.x_next])
    return alpha * (tau - (target < theta[t.x]))


def pqtd_update(theta: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    inc = pqtd_increments(theta, t, alpha, gamma)
    out = np.array(theta, dtype=float, copy=True)
    out[t.x] = theta[t.x] + inc
    return out


# -- update diagnostics -----------------------------------------------------


@dataclass(frozen=True)
class UpdateDiagnostics:
    """Per unit learning rate: exact mean increment and Monte-Carlo noise variance."""

    expected_update: float
    noise_variance: float


NOISE_SAMPLES = 10_000


def _bootstrap(theta, algo):
    if algo == "qtd":
        return theta
    if algo == "pqtd":
        return value_from_quantiles(theta)[:, None]
    raise ValueError(f"unknown algorithm {algo!r}")


def expected_increments(mrp: Mrp, theta: np.ndarray, x: int, algo: str = "qtd") -> np.ndarray:
    """Exact ``tau_i - P(R + gamma * B < theta(x, i))`` for every i at state ``x``.

    ``B`` is a uniformly chosen next-state quantile (QTD) or the next-state
    quantile average (PQTD). Uses the left limit of the reward CDF, matching
    the strict indicator.
    """
    m = theta.shape[1]
    boot = _bootstrap(theta, algo)
    succ = np.flatnonzero(mrp.transition[x])
    w = mrp.transition[x, succ]
    # P(R < theta_i - gamma b) for every (i, successor, b)
    z = theta[x][:, None, None] - mrp.gamma * boot[succ][None, :, :]
    p_below = np.mean(mrp.rewards[x].cdf_left(z), axis=2) @ w
    return quantile_levels(m) - p_below


def sampled_increments(
    mrp: Mrp, theta: np.ndarray, x: int, rng: np.random.Generator, n: int = NOISE_SAMPLES, algo: str = "qtd"
) -> np.ndarray:
    """Per-unit-alpha increments for ``n`` sampled transitions from ``x``; shape (n, m)."""
    m = theta.shape[1]
    u = open_uniform(rng, (n, 2))
    x_next = np.searchsorted(mrp.cum_transition[x], u[:, 0], side="right")
    r = mrp.rewards[x].quantile(u[:, 1])
    boot = _bootstrap(theta, algo)[x_next]
    targets = r[:, None] + mrp.gamma * boot
    frac = np.empty((n, m))
    chunk = max(1, 2_000_000 // (m * targets.shape[1]))
    for lo in range(0, n, chunk):
        blk = targets[lo : lo + chunk]
        frac[lo : lo + chunk] = np.mean(blk[:, None, :] < theta[x][None, :, None], axis=2)
    return quantile_levels(m)[None, :] - frac


def update_profile(
    mrp: Mrp, theta: np.ndarray, algo: str = "qtd", n: int = NOISE_SAMPLES, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Expected increments and noise variances for every (x, i), each shape (n_states, m)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5EED,)))
    expected = np.empty_like(theta, dtype=float)
    noise = np.empty_like(theta, dtype=float)
    for x in range(mrp.n_states):
        expected[x] = expected_increments(mrp, theta, x, algo)
        noise[x] = np.var(sampled_increments(mrp, theta, x, rng, n, algo), axis=0)
    return expected, noise


def qtd_expected_update(
    mrp: Mrp, theta: np.ndarray, x: int, i: int, n: int = NOISE_SAMPLES, seed: int = 0
) -> UpdateDiagnostics:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5EED, x)))
    exp = expected_increments(mrp, theta, x, "qtd")[i]
    noise = np.var(sampled_increments(mrp, theta, x, rng, n, "qtd")[:, i])
    return UpdateDiagnostics(float(exp), float(noise))


def pqtd_expected_update(
    mrp: Mrp, theta: np.ndarray, x: int, i: int, n: int = NOISE_SAMPLES, seed: int = 0
) -> UpdateDiagnostics:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5EED, x)))
    exp = expected_increments(mrp, theta, x, "pqtd")[i]
    noise = np.var(sampled_increments(mrp, theta, x, rng, n, "pqtd")[:, i])
    return UpdateDiagnostics(float(exp), float(noise))
