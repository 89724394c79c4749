"""Matplotlib figure rendering for the report paths.

Every CLI command that writes a delimited report also renders a figure
next to it through one of these helpers. All functions write a PNG and
return its path; nothing is shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import METRIC_NAMES, MethodTable


def plot_training_log(log, out_path, smooth_window: int = 10) -> Path:
    """Loss curves: the three unweighted components (log scale) and the
    weighted total."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    iters = log.column("iteration")
    for name in ("content", "style", "depth"):
        ax1.plot(iters, log.column(name), label=name, linewidth=1)
    ax1.set_yscale("log")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("component loss (unweighted)")
    ax1.legend()
    ax1.grid(alpha=0.3)

    total = log.column("total")
    ax2.plot(iters, total, color="0.7", linewidth=0.8, label="total")
    if len(total) >= smooth_window:
        smoothed = log.smoothed("total", smooth_window)
        ax2.plot(iters[smooth_window - 1:], smoothed, color="C3", linewidth=1.5,
                 label=f"total ({smooth_window}-iter mean)")
    ax2.set_yscale("log")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("weighted total loss")
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_method_comparison(table: MethodTable, out_path) -> Path:
    """Grouped bars: one cluster per metric, one bar per method."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metrics = list(METRIC_NAMES)
    methods = table.methods
    x = np.arange(len(metrics))
    width = 0.8 / max(len(methods), 1)

    fig, ax = plt.subplots(figsize=(1.8 * len(metrics) + 2, 4))
    for i, method in enumerate(methods):
        vals = [table.means[method][m] if table.means[method][m] is not None else np.nan
                for m in metrics]
        ax.bar(x + (i - (len(methods) - 1) / 2) * width, vals, width, label=method)
    ax.set_xticks(x)
    ax.set_xticklabels(metrics, rotation=20)
    ax.set_ylabel("mean similarity")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_depth_tradeoff(summaries, out_path) -> Path:
    """The depth-weight trade-off: depth-map SSIM rises with the weight
    while the style loss the run converges to rises too."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    summaries = sorted(summaries, key=lambda s: s["depth_weight"])
    gammas = [s["depth_weight"] for s in summaries]
    ssims = [s["depth_map_ssim_mean"] for s in summaries]
    styles = [s["final_style_loss"] for s in summaries]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(gammas, ssims, "o-", color="C0", label="depth-map SSIM")
    ax.set_xscale("symlog", linthresh=1.0)
    ax.set_xlabel("depth loss weight")
    ax.set_ylabel("held-out depth-map SSIM", color="C0")
    ax.grid(alpha=0.3)

    ax2 = ax.twinx()
    ax2.plot(gammas, styles, "s--", color="C1", label="final style loss")
    ax2.set_ylabel("final style loss (unweighted)", color="C1")

    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="center right")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_depth_comparison(labeled_images, labeled_maps, out_path) -> Path:
    """Side-by-side grid: one row per image, columns are the image followed
    by each backend's depth map.

    ``labeled_images`` is a list of (label, HxWx3 array in [0,1]);
    ``labeled_maps`` maps backend name -> list of HxW arrays, one per image.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n_rows = len(labeled_images)
    backends = list(labeled_maps)
    n_cols = 1 + len(backends)

    fig, axes = plt.subplots(n_rows, n_cols, figsize=(3 * n_cols, 2.4 * n_rows),
                             squeeze=False)
    for r, (label, img) in enumerate(labeled_images):
        axes[r][0].imshow(img)
        axes[r][0].set_ylabel(label, fontsize=8)
        for c, backend in enumerate(backends, start=1):
            axes[r][c].imshow(labeled_maps[backend][r], cmap="inferno")
            if r == 0:
                axes[r][c].set_title(backend, fontsize=9)
        if r == 0:
            axes[r][0].set_title("input", fontsize=9)
    for row in axes:
        for ax in row:
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
