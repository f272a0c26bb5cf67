"""Distributional dynamic programming for QTD and PQTD fixed points.

The projected operator maps a quantile table to the left quantiles, at the
midpoint levels, of the one-step target law ``R_x + gamma * B`` where ``B`` is
a uniformly chosen next-state quantile (QTD) or the next-state quantile
average (PQTD). Targets are finite mixtures of shifted reward laws; atomic
mixtures are inverted exactly by sorting, continuous ones by a bracketed
Newton iteration with bisection fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import rewards as rw
from .agents import quantile_levels, value_from_quantiles
from .mrp import Mrp, is_bounded, true_value
from .rewards import RewardKind

TOL = 1e-9
MAX_ITERATIONS = 100_000
ROOT_XTOL = 1e-10
# Cumulative atom weights are float sums; a level hit exactly by a partial
# sum must still select that atom.
ATOM_WEIGHT_SLACK = 1e-12
TAIL_LEVEL = 1e-14
# Newton steps this small (relative) leave an error of order their square.
NEWTON_RTOL = 1e-7


class BracketError(RuntimeError):
    """No finite bracket encloses the requested quantile."""


@dataclass(frozen=True)
class Mixture:
    """Weighted mixture of one reward law shifted to several locations."""

    kind: RewardKind
    scale: float
    locs: np.ndarray
    weights: np.ndarray

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        u = (z[..., None] - self.locs) / self.scale
        return rw.standard_cdf(self.kind, u) @ self.weights


def _target_mixture(mrp: Mrp, theta: np.ndarray, x: int, algo: str = "qtd") -> Mixture:
    model = mrp.rewards[x]
    succ = np.flatnonzero(mrp.transition[x])
    w = mrp.transition[x, succ]
    if algo == "qtd":
        boot = theta[succ]
    elif algo == "pqtd":
        boot = value_from_quantiles(theta)[succ][:, None]
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    k = boot.shape[1]
    locs = (model.mean + mrp.gamma * boot).ravel()
    weights = np.repeat(w / k, k)
    return Mixture(model.kind, model.effective_scale, locs, weights)


def target_cdf(mrp: Mrp, theta: np.ndarray, x: int, z, algo: str = "qtd"):
    out = _target_mixture(mrp, theta, x, algo).cdf(z)
    return float(out) if np.ndim(out) == 0 else out


def _atomic_quantiles(locs, weights, taus):
    order = np.argsort(locs, kind="stable")
    atoms = locs[order]
    cum = np.cumsum(weights[order])
    idx = np.searchsorted(cum, taus - ATOM_WEIGHT_SLACK, side="left")
    return atoms[np.minimum(idx, atoms.size - 1)]


def _continuous_quantiles(kind, scale, locs, weights, taus, z0=None, nk=None):
    """Left quantiles of continuous mixtures, one mixture per row.

    ``locs``/``weights`` have shape (S, K), ``nk[s]`` counts the live
    components of row s, ``taus`` has shape (m,) and ``z0`` is an optional
    warm start of shape (S, m). Returns an (S, m) array.
    """
    S, K = locs.shape
    m = taus.size
    if nk is None:
        nk = np.full(S, K, dtype=np.int64)
    # F(lo) <= F_R(q_R(1e-14)) < tau <= F(hi) holds analytically for every
    # row; the kernel flags any root that still collapses onto an endpoint.
    lo = np.array([locs[s, : nk[s]].min() for s in range(S)]) + scale * rw.standard_quantile(kind, TAIL_LEVEL)
    hi = np.array([locs[s, : nk[s]].max() for s in range(S)]) + scale * rw.standard_quantile(kind, 1.0 - TAIL_LEVEL)
    z0 = np.broadcast_to(0.5 * (lo + hi)[:, None], (S, m)) if z0 is None else z0
    out, status = _kernels.mixture_quantiles(
        _kernels.KIND_CODES[kind],
        float(scale),
        np.ascontiguousarray(locs, dtype=float),
        np.ascontiguousarray(weights, dtype=float),
        np.asarray(nk, dtype=np.int64),
        np.asarray(taus, dtype=float),
        np.ascontiguousarray(z0, dtype=float),
        lo,
        hi,
        ROOT_XTOL,
        NEWTON_RTOL,
    )
    if np.any(status == 1):
        raise BracketError("quantile bracket did not enclose the root; table may be malformed")
    if np.any(status == 2):
        raise RuntimeError("mixture quantile iteration cap reached")
    return out


def target_quantile(mrp: Mrp, theta: np.ndarray, x: int, tau, algo: str = "qtd"):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any((tau <= 0) | (tau >= 1)):
        raise ValueError("tau must lie in (0, 1)")
    if not np.all(np.isfinite(theta)):
        raise BracketError("quantile table has non-finite entries")
    mix = _target_mixture(mrp, theta, x, algo)
    if mix.kind is RewardKind.POINT_MASS:
        q = _atomic_quantiles(mix.locs, mix.weights, tau)
    else:
        q = _continuous_quantiles(mix.kind, mix.scale, mix.locs[None], mix.weights[None], tau)[0]
    return float(q[0]) if q.size == 1 else q


def _iterate(mrp: Mrp, theta: np.ndarray, algo: str, guess=None) -> np.ndarray:
    n, m = theta.shape
    if not np.all(np.isfinite(theta)):
        raise BracketError("quantile table has non-finite entries")
    guess = theta if guess is None else guess
    taus = quantile_levels(m)
    out = np.empty_like(theta, dtype=float)
    groups: dict = {}
    for x in range(n):
        mix = _target_mixture(mrp, theta, x, algo)
        if mix.kind is RewardKind.POINT_MASS:
            out[x] = _atomic_quantiles(mix.locs, mix.weights, taus)
        else:
            groups.setdefault((mix.kind, mix.scale), []).append((x, mix))
    for (kind, scale), members in groups.items():
        nk = np.array([mx.locs.size for _, mx in members], dtype=np.int64)
        locs = np.zeros((len(members), nk.max()))
        weights = np.zeros_like(locs)
        for row, (_, mx) in enumerate(members):
            locs[row, : nk[row]] = mx.locs
            weights[row, : nk[row]] = mx.weights
        xs = [x for x, _ in members]
        out[xs] = _continuous_quantiles(kind, scale, locs, weights, taus, z0=guess[xs], nk=nk)
    return out


def qdp_iterate(mrp: Mrp, theta: np.ndarray) -> np.ndarray:
    """One application of the projected distributional Bellman operator."""
    return _iterate(mrp, theta, "qtd")


def pqtd_iterate(mrp: Mrp, theta: np.ndarray) -> np.ndarray:
    """One application of the PQTD expected-dynamics operator."""
    return _iterate(mrp, theta, "pqtd")


@dataclass
class DpResult:
    theta: np.ndarray
    value: np.ndarray
    value_error_sup: float
    iterations: int
    residual: float
    converged: bool


def _fixed_point(mrp, m, algo, tol, max_iterations, theta0=None):
    if m < 1:
        raise ValueError("m must be positive")
    theta = np.zeros((mrp.n_states, m)) if theta0 is None else np.array(theta0, dtype=float)
    residual = math.inf
    prev_step = None
    it = 0
    while it < max_iterations:
        guess = None
        if prev_step is not None and math.isfinite(residual) and prev_residual > 0:
            # root-finder warm start only: extrapolate the geometric tail
            ratio = min(residual / prev_residual, 1.0)
            guess = theta + ratio * prev_step
        new = _iterate(mrp, theta, algo, guess)
        it += 1
        prev_step, prev_residual = new - theta, residual
        residual = float(np.max(np.abs(prev_step)))
        theta = new
        if residual < tol:
            break
    value = value_from_quantiles(theta)
    err = float(np.max(np.abs(value - true_value(mrp))))
    return DpResult(theta, value, err, it, residual, residual < tol)


def qdp_fixed_point(mrp: Mrp, m: int, tol: float = TOL, max_iterations: int = MAX_ITERATIONS) -> DpResult:
    return _fixed_point(mrp, m, "qtd", tol, max_iterations)


def pqtd_fixed_point(mrp: Mrp, m: int, tol: float = TOL, max_iterations: int = MAX_ITERATIONS) -> DpResult:
    return _fixed_point(mrp, m, "pqtd", tol, max_iterations)


# -- fixed-point error bounds -----------------------------------------------


def bound_prop41(mrp: Mrp, m: int) -> float:
    """``(R_max - R_min) / (2 m (1 - gamma)^2)``; infinite for unbounded rewards."""
    if not is_bounded(mrp):
        return math.inf
    means = mrp.mean_rewards
    return float(means.max() - means.min()) / (2.0 * m * (1.0 - mrp.gamma) ** 2)


def bound_prop42(r_min: float, r_max: float, sigma: float, gamma: float, m: int) -> float:
    """Fixed-point error bound for sub-Gaussian rewards with means in [r_min, r_max]."""
    if m < 1 or sigma < 0:
        raise ValueError("need m >= 1 and sigma >= 0")
    root = math.sqrt(2.0 * math.log(2.0 * m))
    inner = (r_max - r_min + 2.0 * sigma * root) / (2.0 * (1.0 - gamma)) + sigma / root
    return inner / ((1.0 - gamma) * m)


def sub_gaussian_sigma(mrp: Mrp) -> float:
    """Common sub-Gaussian parameter of the rewards, or inf if there is none."""
    sigma = 0.0
    for r in mrp.rewards:
        if r.kind is RewardKind.GAUSSIAN:
            sigma = max(sigma, r.scale)
        elif r.kind is not RewardKind.POINT_MASS:
            return math.inf
    return sigma


def mrp_bound_prop42(mrp: Mrp, m: int) -> float:
    sigma = sub_gaussian_sigma(mrp)
    if math.isinf(sigma):
        return math.inf
    means = mrp.mean_rewards
    return bound_prop42(float(means.min()), float(means.max()), sigma, mrp.gamma, m)


@dataclass(frozen=True)
class BoundReport:
    m: int
    bound_41: float
    bound_42: float
    observed_error: float
    iterations: int
    residual: float
    converged: bool

    @property
    def satisfied(self) -> bool:
        b = min(self.bound_41, self.bound_42)
        return self.observed_error <= b + 1e-8


def fixed_point_error_curve(mrp: Mrp, m_list) -> list[BoundReport]:
    out = []
    for m in m_list:
        res = qdp_fixed_point(mrp, m)
        out.append(
            BoundReport(
                m=m,
                bound_41=bound_prop41(mrp, m),
                bound_42=mrp_bound_prop42(mrp, m),
                observed_error=res.value_error_sup,
                iterations=res.iterations,
                residual=res.residual,
                converged=res.converged,
            )
        )
    return out
