"""Matplotlib figure rendering for the report paths.

Every CLI command that writes delimited output also renders a figure next
to it: variance curves for the study, bar charts for the sweep, and frame
montages with ground-truth/detected boxes for generated videos.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

import numpy as np

from .diagnostics import VarianceTrace, variance_mse

__all__ = [
    "save_variance_figure",
    "save_sweep_figure",
    "save_montage_figure",
    "save_eval_figure",
]

_COLORS = {"baseline": "tab:green", "masked": "tab:blue", "masknorm_tid": "tab:orange"}


def save_variance_figure(
    path: str | Path,
    baseline: VarianceTrace,
    masked: VarianceTrace,
    ours: VarianceTrace,
    frozen_steps: int,
) -> None:
    """Variance curves and their squared error against the baseline."""
    steps = np.arange(1, baseline.values.size + 1)
    fig, (ax_var, ax_err) = plt.subplots(1, 2, figsize=(10, 4))
    for trace in (baseline, masked, ours):
        ax_var.plot(steps, trace.values, label=trace.label,
                    color=_COLORS.get(trace.label))
    if frozen_steps > 0:
        for ax in (ax_var, ax_err):
            ax.axvspan(steps[0] - 0.5, frozen_steps + 0.5, color="0.85", zorder=0)
    ax_var.set_xlabel("diffusion step")
    ax_var.set_ylabel("activation variance")
    ax_var.set_title("variance per step")
    ax_var.legend()
    for trace in (masked, ours):
        ax_err.plot(steps, variance_mse(trace, baseline), label=trace.label,
                    color=_COLORS.get(trace.label))
    ax_err.set_xlabel("diffusion step")
    ax_err.set_ylabel("squared error vs baseline")
    ax_err.set_title("variance error per step")
    ax_err.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(path: str | Path, summary: dict) -> None:
    """Bar charts of mIoU and coverage per sweep configuration."""
    per_config = summary["per_config"]
    names = list(per_config)
    miou = [per_config[n]["miou"] if per_config[n]["miou"] is not None else 0.0 for n in names]
    cov = [per_config[n]["coverage"] for n in names]
    fig, (ax_miou, ax_cov) = plt.subplots(1, 2, figsize=(10, 4))
    ax_miou.bar(names, miou, color="tab:orange")
    ax_miou.set_ylabel("mIoU (covered videos)")
    ax_miou.set_ylim(0, 1)
    ax_cov.bar(names, cov, color="tab:blue")
    ax_cov.set_ylabel("coverage")
    ax_cov.set_ylim(0, 1)
    for ax in (ax_miou, ax_cov):
        ax.tick_params(axis="x", rotation=25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _draw_box(ax, box, color):
    x0, y0, x1, y1 = box
    ax.add_patch(Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0,
                           fill=False, edgecolor=color, linewidth=1.5))


def save_montage_figure(
    path: str | Path,
    fields: np.ndarray,
    gt_boxes=None,
    detected_boxes=None,
) -> None:
    """Grid of frames with ground-truth (green) and detected (red) boxes."""
    fields = np.asarray(fields)
    n = fields.shape[0]
    cols = min(n, 8)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2 * cols, 2 * rows), squeeze=False)
    lo, hi = float(fields.min()), float(fields.max())
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        ax.set_xticks([])
        ax.set_yticks([])
        if i >= n:
            ax.axis("off")
            continue
        ax.imshow(fields[i], cmap="gray", vmin=lo, vmax=hi)
        if gt_boxes is not None:
            _draw_box(ax, gt_boxes[i], "lime")
        if detected_boxes is not None and detected_boxes[i] is not None:
            _draw_box(ax, detected_boxes[i], "red")
        ax.set_title(f"frame {i}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_eval_figure(path: str | Path, report) -> None:
    """Per-frame IoU curve of one evaluation report."""
    ious = [v if v is not None else np.nan for v in report.frame_ious]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(ious)), ious, marker="o")
    ax.set_xlabel("frame")
    ax.set_ylabel("IoU vs input box")
    ax.set_ylim(-0.02, 1.02)
    title = f"coverage={'hit' if report.coverage_hit else 'miss'}"
    if report.miou is not None:
        title += f", mIoU={report.miou:.3f}"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
