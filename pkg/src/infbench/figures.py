"""Figure rendering for the report and plot-data paths.

Everything draws through the Agg backend straight to files; nothing here
opens a window. Figures are a companion to the delimited output, not a
replacement: every chart can be rebuilt from the CSV next to it.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .trace import AlignedTrace, Level

_LEVEL_COLORS = {Level.model: "#4878cf", Level.layer: "#ee854a", Level.kernel: "#6acc65"}


def save_layer_bars(layers: list[tuple[str, int]], path: str | Path) -> Path:
    """Horizontal bars of per-layer durations, most expensive on top."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.5 * len(layers) + 1)))
    names = [f"{i}: {name}" for i, (name, _) in enumerate(layers)]
    durations = [ns / 1e6 for _, ns in layers]
    ax.barh(range(len(layers)), durations, color="#ee854a")
    ax.set_yticks(range(len(layers)), names)
    ax.invert_yaxis()
    ax.set_xlabel("duration (ms)")
    ax.set_title("most time-consuming layers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_span_timeline(aligned: AlignedTrace, path: str | Path) -> Path:
    """Gantt-style view of the aligned span hierarchy, one row per level."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(9, 3.2))
    t0 = min((s.start for s in aligned.spans), default=0)
    for level in Level:
        spans = [s for s in aligned.spans if s.level == level]
        bars = [((s.start - t0) / 1e6, max(s.duration, 1) / 1e6) for s in spans]
        row = (2 - int(level)) * 10
        ax.broken_barh(bars, (row, 8), facecolors=_LEVEL_COLORS[level], edgecolor="white")
    ax.set_yticks([24, 14, 4], [lv.name for lv in Level])
    ax.set_xlabel("time since first span (ms)")
    ax.set_title("span timeline by level")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metric_bars(
    rows: list[tuple[str, str, str, str, float]], out_dir: str | Path
) -> list[Path]:
    """One grouped bar chart per metric across (model, system, scenario) runs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_metric: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for model, system, scenario, metric, value in rows:
        by_metric[metric].append((f"{model}\n{system}\n{scenario}", value))
    written = []
    for metric, entries in sorted(by_metric.items()):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(entries)), 3.5))
        labels = [label for label, _ in entries]
        ax.bar(range(len(entries)), [v for _, v in entries], color="#4878cf")
        ax.set_xticks(range(len(entries)), labels, fontsize=7)
        ax.set_title(metric)
        fig.tight_layout()
        path = out_dir / f"{metric.replace('/', '_')}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
