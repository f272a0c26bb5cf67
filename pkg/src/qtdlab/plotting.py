"""SVG figures rendered from result objects.

Output is byte-deterministic: a fixed hash salt for element ids, no date
metadata and text kept as ``<text>`` rather than glyph paths. Each plotted
series carries an SVG group id ``series-<label>`` so it can be located in
the file.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib import rcParams  # noqa: E402
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

_STYLE = {
    "svg.hashsalt": "qtdlab",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "path.simplify": False,
}

_COLORS = ("black", "tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown", "tab:gray")


class FigureKind(str, enum.Enum):
    MSE_VS_LR = "mse_vs_lr"
    IMPROVEMENT_VS_UPDATES = "improvement_vs_updates"
    ERROR_VS_M = "error_vs_m"
    OPTIMAL_LR_VS_UPDATES = "optimal_lr_vs_updates"


@dataclass
class FigureSpec:
    kind: FigureKind
    inputs: list = field(default_factory=list)
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    log_x: bool = True
    log_y: bool = True

    def __post_init__(self):
        self.kind = FigureKind(self.kind)


def _gid(label: str) -> str:
    return "series-" + re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _finite(x, y, *extra):
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = np.isfinite(x) & np.isfinite(y)
    return (x[keep], y[keep]) + tuple(np.asarray(e, float)[keep] for e in extra)


def _series(ax, x, y, label, color, se=None, log_y=False, marker=None):
    x, y, *rest = _finite(x, y, *(() if se is None else (se,)))
    if x.size == 0:
        return None
    (line,) = ax.plot(x, y, color=color, lw=1.2, label=label, marker=marker, ms=3)
    line.set_gid(_gid(label))
    if se is not None:
        se = np.where(np.isfinite(rest[0]), rest[0], 0.0)
        lo, hi = y - 2.0 * se, y + 2.0 * se
        if log_y:
            # keep the band drawable on a log axis
            lo = np.where(lo > 0, lo, y * 1e-3)
        band = ax.fill_between(x, lo, hi, color=color, alpha=0.2, lw=0)
        band.set_gid(_gid(label) + "-band")
    return line


def _new_figure(spec: FigureSpec, width=4.8, height=3.4):
    fig = Figure(figsize=(width, height))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(1, 1, 1)
    if spec.log_x:
        ax.set_xscale("log")
    if spec.log_y:
        ax.set_yscale("log")
    ax.set_title(spec.title)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    ax.grid(True, which="major", lw=0.3, alpha=0.5)
    return fig, ax


def _save(fig, path=None) -> bytes:
    import io

    buf = io.BytesIO()
    with matplotlib.rc_context(_STYLE):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    data = buf.getvalue()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data


def _render(spec: FigureSpec, draw, path=None) -> bytes:
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new_figure(spec)
        draw(ax)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
    return _save(fig, path)


def mse_vs_lr(summaries, checkpoint: int, path=None, title: str = "") -> bytes:
    """MSE against learning rate, one line and ±2 stderr band per sweep."""
    spec = FigureSpec(FigureKind.MSE_VS_LR, title=title or f"MSE after {checkpoint} updates", xlabel="learning rate", ylabel="mean-squared error")

    def draw(ax):
        for k, s in enumerate(summaries):
            col = s.column(checkpoint)
            _series(ax, s.lr_grid, s.mse_mean[:, col], s.label, _COLORS[k % len(_COLORS)], s.mse_stderr[:, col], log_y=True)

    return _render(spec, draw, path)


def improvement_vs_updates(curves, path=None, title: str = "") -> bytes:
    """Optimal-MSE ratio against number of updates with a reference line at 1."""
    spec = FigureSpec(FigureKind.IMPROVEMENT_VS_UPDATES, title=title or "relative MSE", xlabel="number of updates", ylabel="optimal MSE ratio")

    def draw(ax):
        ref = ax.axhline(1.0, color="gray", lw=0.8, ls="--")
        ref.set_gid("reference-1")
        for k, c in enumerate(curves):
            ck = np.asarray(c.checkpoints, float)
            keep = ck > 0
            label = c.env_id if len({cc.env_id for cc in curves}) > 1 else f"{c.label_a} / {c.label_b}"
            _series(ax, ck[keep], c.ratio[keep], label, _COLORS[(k + 1) % len(_COLORS)], c.ratio_stderr[keep], log_y=True, marker="o")

    return _render(spec, draw, path)


def optimal_lr_vs_updates(curves, path=None, title: str = "") -> bytes:
    """Argmin learning rate of both compared agents against number of updates."""
    spec = FigureSpec(FigureKind.OPTIMAL_LR_VS_UPDATES, title=title or "optimal learning rate", xlabel="number of updates", ylabel="optimal learning rate")

    def draw(ax):
        k = 0
        for c in curves:
            ck = np.asarray(c.checkpoints, float)
            keep = ck > 0
            tag = f"{c.env_id} " if len(curves) > 1 else ""
            for label, lrs in ((c.label_a, c.optimal_lr_a), (c.label_b, c.optimal_lr_b)):
                _series(ax, ck[keep], lrs[keep], tag + label, _COLORS[k % len(_COLORS)], marker="o")
                k += 1

    return _render(spec, draw, path)


def error_vs_m(rows, path=None, title: str = "") -> bytes:
    """Fixed-point value error and any finite bounds against m."""
    spec = FigureSpec(FigureKind.ERROR_VS_M, title=title or "fixed-point error", xlabel="m", ylabel="sup value error")

    def draw(ax):
        by_env: dict = {}
        for r in rows:
            by_env.setdefault(r.env_id, []).append(r)
        k = 0
        for env, rs in by_env.items():
            rs = sorted(rs, key=lambda r: r.m)
            ms = [r.m for r in rs]
            color = _COLORS[(k + 1) % len(_COLORS)]
            err = np.array([r.value_error_sup for r in rs])
            # exact zeros cannot sit on a log axis
            err = np.where(err > 0, err, math.nan)
            _series(ax, ms, err, f"{env} error", color, marker="o")
            for name, ls in (("bound_41", ":"), ("bound_42", "-.")):
                b = np.array([getattr(r, name) for r in rs])
                if np.isfinite(b).any():
                    line = _series(ax, ms, b, f"{env} {name}", color)
                    if line is not None:
                        line.set_linestyle(ls)
            k += 1

    return _render(spec, draw, path)


def series_vertices(svg: bytes | str, label: str) -> int:
    """Number of vertices of the polyline drawn for ``label`` (for checks)."""
    text = svg.decode() if isinstance(svg, bytes) else svg
    m = re.search(rf'<g id="{re.escape(_gid(label))}">\s*<path d="([^"]*)"', text)
    if m is None:
        raise KeyError(label)
    return len(re.findall(r"[ML]", m.group(1)))
