"""Compiled inner loops: mixture quantile inversion and batched online training.

Kind codes: 0 point mass, 1 Gaussian, 2 Exponential (mean-zero shift), 3 t2.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rewards import RewardKind

KIND_CODES = {
    RewardKind.POINT_MASS: 0,
    RewardKind.GAUSSIAN: 1,
    RewardKind.EXPONENTIAL: 2,
    RewardKind.STUDENT_T2: 3,
}

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@nb.njit(cache=True, inline="always")
def _cdf_pdf(kind, u):
    if kind == 1:
        return 0.5 * math.erfc(-u * _INV_SQRT2), math.exp(-0.5 * u * u) * _INV_SQRT2PI
    if kind == 2:
        if u < -1.0:
            return 0.0, 0.0
        e = math.exp(-(u + 1.0))
        return -math.expm1(-(u + 1.0)), e
    if abs(u) > 1e100:
        # u * u would overflow; the law is fully in its tail here
        return (1.0 if u > 0.0 else 0.0), 0.0
    s2 = u * u + 2.0
    s = math.sqrt(s2)
    pdf = 1.0 / (s2 * s)
    if u < 0.0:
        return 1.0 / (s * (s - u)), pdf
    return 0.5 * (1.0 + u / s), pdf


@nb.njit(cache=True)
def _mix_eval(kind, scale, locs, weights, nk, z):
    F = 0.0
    f = 0.0
    for k in range(nk):
        c, d = _cdf_pdf(kind, (z - locs[k]) / scale)
        F += weights[k] * c
        f += weights[k] * d
    return F, f / scale


@nb.njit(cache=True)
def mixture_quantiles(kind, scale, locs, weights, nk, taus, z0, lo0, hi0, xtol, newton_rtol):
    """Root of ``F(z) = tau`` per (row, level); returns (values, status).

    status: 0 ok, 1 bracket collapsed onto an initial endpoint (bad bracket),
    2 iteration cap reached.
    """
    S = locs.shape[0]
    m = taus.shape[0]
    out = np.empty((S, m))
    status = np.zeros((S, m), dtype=np.int64)
    for s in range(S):
        for i in range(m):
            tau = taus[i]
            lo = lo0[s]
            hi = hi0[s]
            z = min(max(z0[s, i], lo), hi)
            done = False
            for _ in range(300):
                F, f = _mix_eval(kind, scale, locs[s], weights[s], nk[s], z)
                g = F - tau
                if g == 0.0:
                    out[s, i] = z
                    done = True
                    break
                if g < 0.0:
                    lo = z
                else:
                    hi = z
                zn = z - g / f if f > 0.0 else math.nan
                newton = lo < zn < hi
                if not newton:
                    zn = 0.5 * (lo + hi)
                step = abs(zn - z)
                z = zn
                if newton and step <= newton_rtol * max(1.0, abs(z)):
                    out[s, i] = z
                    done = True
                    break
                if hi - lo <= xtol:
                    out[s, i] = z
                    if lo == lo0[s] or hi == hi0[s]:
                        status[s, i] = 1
                    done = True
                    break
            if not done:
                out[s, i] = z
                status[s, i] = 2
    return out, status


# -- batched online training -------------------------------------------------

AGENT_TD, AGENT_QTD, AGENT_PQTD = 0, 1, 2


@nb.njit(cache=True)
def _insertion_sort(a, n):
    for k in range(1, n):
        v = a[k]
        j = k - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


@nb.njit(cache=True)
def _count_below(sorted_vals, n, q):
    # number of entries strictly below q (left insertion point)
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) >> 1
        if sorted_vals[mid] < q:
            lo = mid + 1
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def exact_sum(a):
    """Correctly rounded sum of a 1-D float64 array (Shewchuk partials)."""
    partials = np.empty(64)
    k = 0
    for idx in range(a.shape[0]):
        x = a[idx]
        if not np.isfinite(x):
            return np.sum(a)
        i = 0
        for j in range(k):
            y = partials[j]
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            if not np.isfinite(hi):
                # finite inputs whose running sum overflows
                return np.sum(a)
            lo = y - (hi - x)
            if lo != 0.0:
                partials[i] = lo
                i += 1
            x = hi
        partials[i] = x
        k = i + 1
    if k == 0:
        return 0.0
    # round the exact sum of the partials half-even, as math.fsum does
    k -= 1
    hi = partials[k]
    lo = 0.0
    while k > 0:
        x = hi
        k -= 1
        y = partials[k]
        hi = x + y
        lo = y - (hi - x)
        if lo != 0.0:
            break
    if k > 0 and ((lo < 0.0 and partials[k - 1] < 0.0) or (lo > 0.0 and partials[k - 1] > 0.0)):
        y = lo * 2.0
        x = hi + y
        if y == x - hi:
            hi = x
    return hi


@nb.njit(cache=True)
def row_mean(a):
    return exact_sum(a) / a.shape[0]


@nb.njit(cache=True)
def rows_mean(table):
    out = np.empty(table.shape[0])
    for x in range(table.shape[0]):
        out[x] = row_mean(table[x])
    return out


@nb.njit(cache=True)
def run_chains(
    agent, m, gamma, cum, means, scales, slots, noise, start, next_u, state_u, iid, alphas, checkpoints, v_true, weights
):
    """Simulate independent training runs and record weighted MSE at checkpoints.

    noise[k, c, t]: standard reward draw for run c at step t mapped through
    the standard quantile of reward family slot k; state x reads slot
    ``slots[x]`` and scales it by ``scales[x]``.
    next_u[c, t]: uniform for the next-state draw. state_u[c, t]: uniform for
    the i.i.d. state draw (only read when ``iid``). start[c]: initial state.
    """
    C = alphas.shape[0]
    n = cum.shape[0]
    T = noise.shape[2]
    n_ck = checkpoints.shape[0]
    mse = np.empty((C, n_ck))
    tau = np.empty(m)
    for i in range(m):
        tau[i] = (2.0 * (i + 1) - 1.0) / (2.0 * m)
    for c in range(C):
        alpha = alphas[c]
        width = 1 if agent == AGENT_TD else m
        table = np.zeros((n, width))
        inc = np.empty(width)
        targets = np.empty(m)
        x = start[c]
        ck = 0
        for t in range(T + 1):
            while ck < n_ck and checkpoints[ck] == t:
                acc = 0.0
                finite = True
                for y in range(n):
                    if agent == AGENT_TD:
                        est = table[y, 0]
                    else:
                        est = row_mean(table[y])
                    if not math.isfinite(est):
                        finite = False
                    d = est - v_true[y]
                    acc += weights[y] * d * d
                mse[c, ck] = acc if finite else math.inf
                ck += 1
            if t == T:
                break
            if iid:
                x = min(int(state_u[c, t] * n), n - 1)
            u = next_u[c, t]
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) >> 1
                if cum[x, mid] <= u:
                    lo = mid + 1
                else:
                    hi = mid
            xn = lo
            r = means[x] + scales[x] * noise[slots[x], c, t]
            if agent == AGENT_TD:
                table[x, 0] = table[x, 0] + alpha * (r + gamma * table[xn, 0] - table[x, 0])
            elif agent == AGENT_QTD:
                for j in range(m):
                    targets[j] = table[xn, j]
                _insertion_sort(targets, m)
                for j in range(m):
                    targets[j] = r + gamma * targets[j]
                for i in range(m):
                    cnt = _count_below(targets, m, table[x, i])
                    inc[i] = alpha * (tau[i] - cnt / m)
                for i in range(m):
                    table[x, i] = table[x, i] + inc[i]
            else:
                target = r + gamma * row_mean(table[xn])
                for i in range(m):
                    below = 1.0 if target < table[x, i] else 0.0
                    inc[i] = alpha * (tau[i] - below)
                for i in range(m):
                    table[x, i] = table[x, i] + inc[i]
            if not iid:
                x = xn
    return mse
