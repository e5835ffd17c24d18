"""Matplotlib figure rendering for the bundled experiment recipes.

The recipe runner writes delimited summaries next to these figures; the
figures are the human-readable report view of the same data.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import ReplicateSummary

__all__ = ["plot_summaries", "plot_panels"]


def _draw(ax, summaries: Dict[str, ReplicateSummary], metric: str, band: bool) -> None:
    for label, s in summaries.items():
        mean = s.mean_dist_sq if metric == "dist_sq" else s.mean_loss
        std = s.std_dist_sq if metric == "dist_sq" else s.std_loss
        line = ax.plot(s.t, mean, label=label, linewidth=1.4)[0]
        if band and np.any(std > 0):
            lower = np.maximum(mean - std, np.min(mean[mean > 0]) * 1e-3 if np.any(mean > 0) else 1e-12)
            ax.fill_between(s.t, lower, mean + std, alpha=0.18, color=line.get_color(), linewidth=0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration t")
    ax.set_ylabel("squared distance to stable point" if metric == "dist_sq" else "loss")
    ax.grid(True, which="both", alpha=0.25)
    ax.legend(fontsize=8)


def plot_summaries(
    summaries: Dict[str, ReplicateSummary],
    path,
    title: str = "",
    metric: str = "dist_sq",
    band: bool = True,
) -> None:
    """One log-y panel with a curve (and optional +/- std band) per summary."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=130)
    _draw(ax, summaries, metric, band)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_panels(
    panels: Sequence[Dict[str, ReplicateSummary]],
    path,
    titles: Optional[Sequence[str]] = None,
    metric: str = "dist_sq",
    band: bool = True,
    suptitle: str = "",
) -> None:
    """Side-by-side panels sharing the metric and scale conventions."""
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(5.6 * n, 4.2), dpi=130, squeeze=False)
    for i, summaries in enumerate(panels):
        _draw(axes[0][i], summaries, metric, band)
        if titles and titles[i]:
            axes[0][i].set_title(titles[i], fontsize=10)
    if suptitle:
        fig.suptitle(suptitle, fontsize=11)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
