"""Figure rendering for the report paths of the CLI.

Everything goes through the Agg backend straight to files; nothing opens a
window.  These plots sit alongside the delimited outputs so an analysis run
is inspectable without re-plotting by hand.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import SCORE_FIELDS, MetricReport


def save_metric_bars(report: MetricReport, path: str | Path) -> Path:
    """Bar chart of the eight aggregate scores."""
    path = Path(path)
    values = [getattr(report, name) for name in SCORE_FIELDS]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(values)), values, color="#4878cf")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(SCORE_FIELDS, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("aggregate clinical scores")
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_phi_bars(mean_phi: Mapping[str, float], path: str | Path) -> Path:
    """Bar chart of mean concordance ratio per metric."""
    path = Path(path)
    names = list(mean_phi)
    values = [mean_phi[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values, color="#6acc65")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean concordance ratio")
    ax.set_title("rank agreement with perturbation order")
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_correlation_heatmap(
    names: Sequence[str], matrix: np.ndarray, path: str | Path
) -> Path:
    """Annotated heatmap of the metric-by-metric rank correlations."""
    path = Path(path)
    size = len(names)
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * size + 2),) * 2)
    image = ax.imshow(matrix, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(size))
    ax.set_yticks(range(size))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_yticklabels(names, fontsize=8)
    for i in range(size):
        for j in range(size):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=7)
    fig.colorbar(image, ax=ax, shrink=0.8)
    ax.set_title("metric rank correlation")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
