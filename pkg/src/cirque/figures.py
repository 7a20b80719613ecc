"""Figure rendering for reports and sweeps (written next to the data files)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport


def save_sweep_heatmap(
    alphas: Sequence[float],
    betas: Sequence[float],
    values: np.ndarray,
    metric: str,
    path: str | Path,
) -> None:
    """Heatmap of a metric over the fusion-weight grid; alpha rows, beta columns."""
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(1.1 * len(betas) + 2.2, 1.0 * len(alphas) + 1.8))
    im = ax.imshow(values, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(betas)), [f"{b:g}" for b in betas])
    ax.set_yticks(range(len(alphas)), [f"{a:g}" for a in alphas])
    ax.set_xlabel("caption weight (beta)")
    ax.set_ylabel("text weight (alpha)")
    ax.set_title(metric)
    span = float(values.max() - values.min())
    threshold = values.min() + 0.55 * span if span > 0 else values.min()
    for i in range(len(alphas)):
        for j in range(len(betas)):
            color = "black" if values[i, j] >= threshold else "white"
            ax.text(j, i, f"{values[i, j]:.2f}", ha="center", va="center", color=color, fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_grid_size_curve(
    sizes: Sequence[int], values: Sequence[float], metric: str, path: str | Path
) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(sizes, values, marker="o")
    ax.set_xticks(list(sizes))
    ax.set_xlabel("grid side m (window = m*m)")
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} vs. rerank window")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_report_figure(report: EvalReport, path: str | Path) -> None:
    """Bar chart of the report: one bar group per metric, split by group if any."""
    labels = list(report.per_metric)
    series: list[tuple[str, list[float]]] = []
    if report.per_group:
        for name, values in report.per_group.items():
            series.append((name, [values[label] for label in labels]))
        series.append(("average", [report.group_average[label] for label in labels]))
    else:
        series.append(("overall", [report.per_metric[label] for label in labels]))

    x = np.arange(len(labels), dtype=float)
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(1.6 * len(labels) + 2.5, 4.0))
    for i, (name, values) in enumerate(series):
        offset = (i - (len(series) - 1) / 2) * width
        ax.bar(x + offset, values, width=width, label=name)
    ax.set_xticks(x, labels)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 100)
    ax.set_title(f"evaluation over {report.query_count} queries")
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
