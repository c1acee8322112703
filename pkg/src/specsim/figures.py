"""Figure rendering for sweep results: static PNGs written next to the
delimited report files.  Kept separate from metrics so that measurement
stays a pure-data concern.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_VARIANT_STYLE = {
    "ar": dict(color="#888888", marker="s", linestyle="--"),
    "ordinary": dict(color="#1f77b4", marker="o", linestyle="-"),
    "parallel": dict(color="#d62728", marker="^", linestyle="-"),
    "hybrid": dict(color="#2ca02c", marker="D", linestyle="-"),
}


def _grouped(entries) -> dict[str, dict[str, list]]:
    """variant -> axis label -> list of reports (replicates)."""
    out: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for e in entries:
        out[e.variant][e.axis_value].append(e.report)
    return out


def _axis_positions(labels: Sequence[str]) -> tuple[list[float], bool]:
    try:
        return [float(v) for v in labels], True
    except ValueError:
        return list(range(len(labels))), False


def _plot_metric(entries, metric: str, ylabel: str, title: str, path: Path) -> Path:
    groups = _grouped(entries)
    labels = list(dict.fromkeys(e.axis_value for e in entries))
    xs, numeric = _axis_positions(labels)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for variant, by_label in groups.items():
        ys = []
        for label in labels:
            reports = by_label.get(label, [])
            vals = [getattr(r, metric) for r in reports]
            ys.append(sum(vals) / len(vals) if vals else float("nan"))
        style = _VARIANT_STYLE.get(variant, {})
        ax.plot(xs, ys, label=variant, markersize=5, **style)
    axis_name = entries[0].axis if entries else ""
    ax.set_xlabel(axis_name)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if not numeric:
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_figures(entries, out_dir: str | Path, prefix: str) -> list[Path]:
    """Render the standard figure set for one sweep; returns written paths."""
    if not entries:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _plot_metric(
            entries,
            "target_throughput",
            "target throughput (tok/s)",
            f"{prefix}: throughput",
            out / f"{prefix}_throughput.png",
        ),
        _plot_metric(
            entries,
            "mean_accepted_length",
            "mean accepted length (tok/round)",
            f"{prefix}: accepted length",
            out / f"{prefix}_accepted_length.png",
        ),
        _plot_metric(
            entries,
            "mean_rollback_ratio",
            "mean rollback ratio",
            f"{prefix}: rollback ratio",
            out / f"{prefix}_rollback_ratio.png",
        ),
    ]
    return written
