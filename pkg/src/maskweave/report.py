"""Overlap and accuracy-sparsity figures rendered to deterministic SVG.

Rendering goes through matplotlib's SVG backend with a fixed hash salt, no
timestamp and text kept as ``<text>`` elements, so identical series produce
identical bytes.
"""

from __future__ import annotations

import io
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .artifacts import atomic_write
from .errors import UsageError

STYLES = ("solid", "dashed")
STRATEGY_ORDER = ("oneshot_baseline", "union", "intersect", "random_ticket")
_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")


@dataclass
class CurveSeries:
    label: str
    points: list
    style: str = "solid"
    counts: list = field(default_factory=list)

    def __post_init__(self):
        if self.style not in STYLES:
            raise UsageError(f"style must be one of {STYLES}")
        xs = [x for x, _ in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise UsageError(f"series {self.label!r}: x values must strictly increase")
        if not self.counts:
            self.counts = [1] * len(self.points)

    @property
    def xs(self):
        return [p[0] for p in self.points]

    @property
    def ys(self):
        return [p[1] for p in self.points]


@dataclass(frozen=True)
class AxesConfig:
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    xlim: Optional[tuple] = None
    ylim: Optional[tuple] = None
    yscale: str = "linear"
    width_in: float = 6.0
    height_in: float = 4.0


OVERLAP_AXES = AxesConfig("per-sibling sparsity", "pruning overlap ratio",
                          "Pruning overlap vs. chance", xlim=(0.0, 1.0), yscale="log")
ACCURACY_AXES = AxesConfig("sparsity after composition", "test accuracy",
                           "Accuracy after retraining", xlim=(0.0, 1.0), ylim=(0.0, 1.0))


def _get(row, name):
    return row[name] if isinstance(row, dict) else getattr(row, name)


def _merge(points):
    """Sort by x and average duplicate x values; returns (points, counts)."""
    acc = defaultdict(list)
    for x, y in points:
        acc[float(x)].append(float(y))
    xs = sorted(acc)
    return [(x, sum(acc[x]) / len(acc[x])) for x in xs], [len(acc[x]) for x in xs]


def _label(base, counts):
    merged = sum(c for c in counts if c > 1)
    return f"{base} ({merged} rows averaged)" if merged else base


def build_overlap_curves(rows: Sequence) -> list:
    """One solid series per ``(k, t)`` group and one dashed ``s**(k-1)`` series per ``k``.

    ``rows`` are overlap-table dicts or objects with ``k``, ``t``,
    ``per_sibling_sparsity`` and ``overlap_ratio``.
    """
    rows = list(rows)
    if not rows:
        raise UsageError("overlap table is empty")
    groups = OrderedDict()
    for r in sorted(rows, key=lambda r: (_get(r, "k"), _get(r, "t"))):
        groups.setdefault((_get(r, "k"), _get(r, "t")), []).append(
            (_get(r, "per_sibling_sparsity"), _get(r, "overlap_ratio")))
    series = []
    for (k, t), pts in groups.items():
        merged, counts = _merge(pts)
        series.append(CurveSeries(_label(f"k={k}, t={t}", counts), merged, "solid", counts))
    for k in sorted({k for k, _ in groups}):
        xs = sorted({float(_get(r, "per_sibling_sparsity")) for r in rows if _get(r, "k") == k})
        series.append(CurveSeries(f"chance, k={k}", [(x, x ** (k - 1)) for x in xs], "dashed"))
    return series


def build_accuracy_curves(records: Sequence) -> list:
    """One series per strategy (split by ``(k, t)`` when the table mixes runs);
    x is post-composition sparsity, y is test accuracy."""
    records = list(records)
    if not records:
        raise UsageError("results table is empty")
    runs = sorted({(_get(r, "k"), _get(r, "t")) for r in records})
    rank = {s: i for i, s in enumerate(STRATEGY_ORDER)}
    keyed = OrderedDict()
    for r in sorted(records, key=lambda r: (_get(r, "k"), _get(r, "t"),
                                            rank.get(_get(r, "strategy"), 99),
                                            _get(r, "strategy"))):
        key = (_get(r, "strategy"), _get(r, "k"), _get(r, "t"))
        keyed.setdefault(key, []).append(
            (_get(r, "composed_sparsity"), _get(r, "test_accuracy")))
    series = []
    for (strategy, k, t), pts in keyed.items():
        base = strategy if len(runs) == 1 else f"{strategy} (k={k}, t={t})"
        merged, counts = _merge(pts)
        series.append(CurveSeries(_label(base, counts), merged, "solid", counts))
    return series


def overlap_axes(series: Sequence[CurveSeries]) -> AxesConfig:
    """Log y when some curve spans several decades, linear otherwise."""
    ys = [y for s in series for y in s.ys if y > 0]
    if ys and min(ys) < 1e-2:
        return OVERLAP_AXES
    return AxesConfig(OVERLAP_AXES.xlabel, OVERLAP_AXES.ylabel, OVERLAP_AXES.title,
                      xlim=(0.0, 1.0), ylim=(0.0, 1.0))


def render_svg(series: Sequence[CurveSeries], axes: AxesConfig) -> bytes:
    series = list(series)
    if not series:
        raise UsageError("nothing to plot")
    fig = Figure(figsize=(axes.width_in, axes.height_in))
    canvas = FigureCanvasSVG(fig)
    ax = fig.add_subplot(1, 1, 1)
    solid = 0
    for s in series:
        if s.style == "dashed":
            ax.plot(s.xs, s.ys, linestyle="--", color="0.45", linewidth=1.0, label=s.label)
        else:
            ax.plot(s.xs, s.ys, marker="o", markersize=3, linewidth=1.5,
                    color=_COLORS[solid % len(_COLORS)], label=s.label)
            solid += 1
    ax.set_yscale(axes.yscale)
    if axes.xlim:
        ax.set_xlim(*axes.xlim)
    if axes.ylim:
        ax.set_ylim(*axes.ylim)
    ax.set_xlabel(axes.xlabel)
    ax.set_ylabel(axes.ylabel)
    if axes.title:
        ax.set_title(axes.title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small", loc="best")
    fig.tight_layout()
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "maskweave", "svg.fonttype": "none"}):
        canvas.print_svg(buf, metadata={"Date": None, "Creator": "maskweave"})
    return buf.getvalue()


def emit_svg(series: Sequence[CurveSeries], axes: AxesConfig, path) -> Path:
    path = Path(path)
    atomic_write(path, render_svg(series, axes))
    return path
