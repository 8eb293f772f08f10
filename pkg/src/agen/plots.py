"""Figure rendering for benchmark and EM reports.

All figures are written straight to files with the Agg backend so the
package works headless. Each saver takes the same row dictionaries that
back the corresponding CSV, keeping figure and table in sync.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_benchmark_figure", "save_em_figure", "save_montage_figure"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def save_benchmark_figure(path, summaries) -> None:
    """Success rate and mean IOU against initialization offset, per method."""
    fig, (ax_s, ax_i) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for k, summary in enumerate(summaries):
        offsets = [r["offset"] for r in summary.rows]
        succ = [r["success_rate"] for r in summary.rows]
        iou = [r["mean_iou"] for r in summary.rows]
        color = _COLORS[k % len(_COLORS)]
        ax_s.plot(offsets, succ, marker="o", color=color, label=summary.method)
        ax_i.plot(offsets, iou, marker="o", color=color, label=summary.method)
    ax_s.set_xlabel("init offset (px)")
    ax_s.set_ylabel("success rate (IOU > 0.5)")
    ax_s.set_ylim(-0.02, 1.02)
    ax_i.set_xlabel("init offset (px)")
    ax_i.set_ylabel("mean IOU")
    ax_i.set_ylim(-0.02, 1.02)
    ax_s.legend(loc="lower left", fontsize=8)
    for ax in (ax_s, ax_i):
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_em_figure(path, report) -> None:
    """Held-out bound and mean IOU per EM round, with bound error bars."""
    rounds = [r["round"] for r in report]
    bound = np.array([r["heldout_bound_nats"] for r in report], dtype=float)
    stderr = np.array([r["stderr"] for r in report], dtype=float)
    iou = np.array([r["mean_iou"] for r in report], dtype=float)

    n_panels = int(np.any(np.isfinite(bound))) + int(np.any(np.isfinite(iou)))
    n_panels = max(n_panels, 1)
    fig, axes = plt.subplots(1, n_panels, figsize=(4.6 * n_panels, 3.6),
                             squeeze=False)
    col = 0
    if np.any(np.isfinite(bound)):
        ax = axes[0][col]
        ax.errorbar(rounds, bound, yerr=np.nan_to_num(stderr), marker="o",
                    color=_COLORS[0], capsize=3)
        ax.set_xlabel("EM round")
        ax.set_ylabel("held-out bound (nats)")
        ax.grid(True, alpha=0.3)
        col += 1
    if np.any(np.isfinite(iou)):
        ax = axes[0][col]
        ax.plot(rounds, iou, marker="o", color=_COLORS[1])
        ax.set_xlabel("EM round")
        ax.set_ylabel("mean sample IOU")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
        col += 1
    if col == 0:
        ax = axes[0][0]
        ax.plot(rounds, [r["n_samples"] for r in report], marker="o",
                color=_COLORS[2])
        ax.set_xlabel("EM round")
        ax.set_ylabel("posterior samples")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_montage_figure(path, patches: np.ndarray, width: int, height: int,
                        cols: int = 8) -> None:
    """Grid of canonical patches rendered as grayscale tiles."""
    patches = np.asarray(patches, dtype=float)
    n = patches.shape[0]
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(cols * 0.9, rows * 0.9),
                             squeeze=False)
    for idx in range(rows * cols):
        ax = axes[idx // cols][idx % cols]
        ax.set_axis_off()
        if idx < n:
            img = patches[idx].reshape(height, width) if patches[idx].ndim == 1 \
                else patches[idx]
            ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0,
                      interpolation="nearest")
    fig.tight_layout(pad=0.2)
    fig.savefig(path, dpi=120)
    plt.close(fig)
