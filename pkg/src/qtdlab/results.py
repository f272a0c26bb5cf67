"""CSV serialisation of sweep, improvement and fixed-point results.

Floats are written with ``repr`` so every value parses back bit for bit;
infinities appear as ``inf``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .harness import ImprovementCurve, SweepSummary

SWEEP_COLUMNS = ("env_id", "agent", "m", "lr", "checkpoint", "mse_mean", "mse_stderr", "n_runs", "n_diverged")
IMPROVEMENT_COLUMNS = (
    "env_id",
    "label_a",
    "label_b",
    "checkpoint",
    "ratio",
    "ratio_stderr",
    "optimal_lr_a",
    "optimal_lr_b",
    "mse_a",
    "mse_b",
)
FIXED_POINT_COLUMNS = ("env_id", "m", "value_error_sup", "bound_41", "bound_42", "iterations", "residual", "converged")
TABLE_COLUMNS = ("state", "i", "theta")


class SchemaError(ValueError):
    """CSV columns do not match the expected schema."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(rows, columns, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _read(source, columns) -> list[dict]:
    if isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    have = tuple(reader.fieldnames or ())
    missing = [c for c in columns if c not in have]
    if missing:
        raise SchemaError(f"missing columns {missing}; found {list(have)}")
    return list(reader)


# -- sweeps -----------------------------------------------------------------


def sweep_rows(s: SweepSummary):
    for li, lr in enumerate(s.lr_grid):
        for ci, ck in enumerate(s.checkpoints):
            yield (
                s.env_id,
                s.agent,
                s.m,
                float(lr),
                ck,
                float(s.mse_mean[li, ci]),
                float(s.mse_stderr[li, ci]),
                s.n_runs,
                int(s.n_diverged[li, ci]),
            )


def write_sweeps(summaries, path=None) -> str:
    if isinstance(summaries, SweepSummary):
        summaries = [summaries]
    return _write((r for s in summaries for r in sweep_rows(s)), SWEEP_COLUMNS, path)


def read_sweeps(source) -> list[SweepSummary]:
    """One SweepSummary per (env_id, agent, m) group, in order of first appearance."""
    groups: dict = {}
    for row in _read(source, SWEEP_COLUMNS):
        key = (row["env_id"], row["agent"], int(row["m"]))
        groups.setdefault(key, []).append(row)
    out = []
    for (env, agent, m), rows in groups.items():
        lrs = sorted({float(r["lr"]) for r in rows})
        cks = sorted({int(r["checkpoint"]) for r in rows})
        shape = (len(lrs), len(cks))
        mean, se = np.full(shape, np.nan), np.full(shape, np.nan)
        div = np.zeros(shape, dtype=np.int64)
        li = {v: k for k, v in enumerate(lrs)}
        ci = {v: k for k, v in enumerate(cks)}
        for r in rows:
            at = (li[float(r["lr"])], ci[int(r["checkpoint"])])
            mean[at] = float(r["mse_mean"])
            se[at] = float(r["mse_stderr"])
            div[at] = int(r["n_diverged"])
        if np.isnan(mean).any():
            raise SchemaError(f"incomplete (lr, checkpoint) grid for {env}/{agent}")
        out.append(SweepSummary(env, agent, m, np.array(lrs), tuple(cks), mean, se, int(rows[0]["n_runs"]), div))
    return out


# -- improvement curves -----------------------------------------------------


def write_improvements(curves, path=None) -> str:
    if isinstance(curves, ImprovementCurve):
        curves = [curves]
    rows = (
        (c.env_id, c.label_a, c.label_b, ck, c.ratio[k], c.ratio_stderr[k], c.optimal_lr_a[k], c.optimal_lr_b[k], c.mse_a[k], c.mse_b[k])
        for c in curves
        for k, ck in enumerate(c.checkpoints)
    )
    return _write(rows, IMPROVEMENT_COLUMNS, path)


def read_improvements(source) -> list[ImprovementCurve]:
    groups: dict = {}
    for row in _read(source, IMPROVEMENT_COLUMNS):
        groups.setdefault((row["env_id"], row["label_a"], row["label_b"]), []).append(row)
    out = []
    for (env, la, lb), rows in groups.items():
        rows.sort(key=lambda r: int(r["checkpoint"]))

        def col(name, rows=rows):
            return np.array([float(r[name]) for r in rows])

        out.append(
            ImprovementCurve(
                env_id=env,
                label_a=la,
                label_b=lb,
                checkpoints=tuple(int(r["checkpoint"]) for r in rows),
                ratio=col("ratio"),
                ratio_stderr=col("ratio_stderr"),
                optimal_lr_a=col("optimal_lr_a"),
                optimal_lr_b=col("optimal_lr_b"),
                mse_a=col("mse_a"),
                mse_b=col("mse_b"),
            )
        )
    return out


# -- fixed points -----------------------------------------------------------


@dataclass(frozen=True)
class FixedPointRow:
    env_id: str
    m: int
    value_error_sup: float
    bound_41: float
    bound_42: float
    iterations: int
    residual: float
    converged: bool


def write_fixed_points(rows, path=None) -> str:
    return _write(
        ((r.env_id, r.m, r.value_error_sup, r.bound_41, r.bound_42, r.iterations, r.residual, r.converged) for r in rows),
        FIXED_POINT_COLUMNS,
        path,
    )


def read_fixed_points(source) -> list[FixedPointRow]:
    return [
        FixedPointRow(
            r["env_id"],
            int(r["m"]),
            float(r["value_error_sup"]),
            float(r["bound_41"]),
            float(r["bound_42"]),
            int(r["iterations"]),
            float(r["residual"]),
            r["converged"].strip() in ("1", "True", "true"),
        )
        for r in _read(source, FIXED_POINT_COLUMNS)
    ]


# -- quantile tables --------------------------------------------------------


def write_table(theta: np.ndarray, path=None) -> str:
    theta = np.atleast_2d(theta)
    rows = ((x, i, float(theta[x, i])) for x in range(theta.shape[0]) for i in range(theta.shape[1]))
    return _write(rows, TABLE_COLUMNS, path)


def read_table(source) -> np.ndarray:
    rows = _read(source, TABLE_COLUMNS)
    n = 1 + max(int(r["state"]) for r in rows)
    m = 1 + max(int(r["i"]) for r in rows)
    theta = np.full((n, m), np.nan)
    for r in rows:
        theta[int(r["state"]), int(r["i"])] = float(r["theta"])
    return theta
