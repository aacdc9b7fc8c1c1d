"""Matplotlib figure rendering for the report outputs.

Every figure lands next to its delimited counterpart (loss CSV, grid CSV,
metrics CSV) so reports stay self-contained.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

VERDICT_COLORS = {
    "converged": "#2e8b57",
    "partial": "#d4a017",
    "failed": "#c0392b",
}


def plot_loss_curve(loss_history, path, title="Mask loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(len(loss_history)), loss_history, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mask loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_grid_heatmap(rows, path) -> None:
    """Verdict-colored grid with the per-cell error summary as text."""
    n_rot = len(rows)
    n_pos = len(rows[0]) if rows else 0
    fig, ax = plt.subplots(figsize=(1.9 * n_pos + 2.2, 1.1 * n_rot + 1.8))
    for r, row in enumerate(rows):
        for p, cell in enumerate(row):
            color = VERDICT_COLORS.get(cell.verdict, "#888888")
            ax.add_patch(
                plt.Rectangle((p, n_rot - 1 - r), 1, 1, color=color, alpha=0.55)
            )
            ax.text(
                p + 0.5,
                n_rot - 1 - r + 0.5,
                f"{cell.mean_rot_err:.1f}±{cell.std_rot_err:.1f}°\n"
                f"{cell.mean_pos_err:.1f}±{cell.std_pos_err:.1f}cm",
                ha="center",
                va="center",
                fontsize=8,
            )
    ax.set_xlim(0, n_pos)
    ax.set_ylim(0, n_rot)
    ax.set_xticks(np.arange(n_pos) + 0.5)
    ax.set_xticklabels(
        [f"{c.pos_range[0]:g}-{c.pos_range[1]:g}" for c in rows[0]] if rows else []
    )
    ax.set_yticks(np.arange(n_rot) + 0.5)
    ax.set_yticklabels(
        [f"{row[0].rot_range[0]:g}-{row[0].rot_range[1]:g}" for row in reversed(rows)]
    )
    ax.set_xlabel("position noise (cm)")
    ax.set_ylabel("rotation noise (°)")
    ax.set_title("Refinement convergence by injected noise")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_accuracy_curve(distances, max_threshold, bins, path) -> None:
    """Accuracy vs distance threshold, the curve the AUC metric integrates."""
    d = np.asarray(distances, dtype=np.float64)
    thresholds = np.arange(bins) * (max_threshold / bins)
    acc = [(d < t).mean() for t in thresholds]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, acc, lw=1.5)
    ax.set_xlabel("distance threshold (m)")
    ax.set_ylabel("fraction of points below threshold")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Pose-error accuracy curve")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
