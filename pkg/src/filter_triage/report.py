"""Render result figures next to their CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .finetune import AccuracyCurve, DisparityHeatmap  # noqa: E402
from .susceptibility import FilterRanking  # noqa: E402


def save_ranking_figure(ranking: FilterRanking, path: str | Path, title: str = "") -> None:
    """Bar chart of Borda scores (or raw distances) per filter index."""
    f = ranking.filter_count
    use_scores = ranking.scores.any()
    values = ranking.scores if use_scores else ranking.mean_distance
    colors = ["#d62728" if j in set(ranking.order[:max(1, f // 4)].tolist()) else "#1f77b4"
              for j in range(f)]
    fig, ax = plt.subplots(figsize=(max(6, f * 0.12), 3.2))
    ax.bar(np.arange(f), values[np.arange(f)], color=colors, width=0.8)
    ax.set_xlabel("filter index")
    ax.set_ylabel("Borda score" if use_scores else "distance")
    ax.set_title(title or f"susceptibility, {ranking.layer_id} (top quartile in red)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_curve_figure(curve: AccuracyCurve, path: str | Path, title: str = "") -> None:
    """Median noisy-test accuracy vs train size, one line per mode."""
    modes = sorted({c.mode for c in curve.cells})
    sizes = sorted({c.train_size for c in curve.cells})
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for mode in modes:
        ys = [curve.median(mode, n) for n in sizes]
        ax.plot(sizes, ys, marker="o", label=mode)
    ax.set_xscale("log")
    ax.set_xlabel("distorted training images")
    ax.set_ylabel("noisy test accuracy (median)")
    ax.set_title(title or "fine-tuning configurations")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_heatmap_figure(heatmaps: list[DisparityHeatmap], path: str | Path,
                        labels: list[str] | None = None) -> None:
    """Hamming-disparity grids side by side, totals in the panel titles."""
    n = len(heatmaps)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    vmax = max(int(h.grid.max()) for h in heatmaps) or 1
    for i, hm in enumerate(heatmaps):
        ax = axes[0][i]
        im = ax.imshow(hm.grid, cmap="inferno", vmin=0, vmax=vmax)
        name = labels[i] if labels else hm.layer_id
        ax.set_title(f"{name} ({hm.total})", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_overlap_figure(rows: list[dict], path: str | Path) -> None:
    """Bar chart of top-k overlap counts per layer/configuration."""
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    names = [f"{r['layer']}\n{r['features']}/{r['distance']}" for r in rows]
    counts = [r["overlap"] for r in rows]
    ks = [r["k"] for r in rows]
    ax.bar(range(len(rows)), counts, color="#1f77b4")
    for i, (c, k) in enumerate(zip(counts, ks)):
        ax.text(i, c + 0.05, f"{c}/{k}", ha="center", fontsize=8)
    ax.set_xticks(range(len(rows)), names, fontsize=7)
    ax.set_ylabel("matching filters in top-k")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
