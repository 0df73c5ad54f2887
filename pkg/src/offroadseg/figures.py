"""Matplotlib renderings: per-class IoU bars and training curves."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport


def save_iou_bar_chart(report: EvalReport, path: str | Path) -> Path:
    """Bar per class (percent IoU), mIoU as a horizontal reference line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(report.class_names)
    vals = [0.0 if v is None else 100.0 * v for v in report.per_class_iou]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    bars = ax.bar(range(len(names)), vals, color="#4878a8")
    for i, (bar, v) in enumerate(zip(bars, report.per_class_iou)):
        label = "n/a" if v is None else f"{100.0 * v:.1f}"
        ax.text(i, bar.get_height() + 1.0, label, ha="center", va="bottom", fontsize=8)
    if not math.isnan(report.miou):
        ax.axhline(100.0 * report.miou, color="#b04030", linestyle="--", linewidth=1,
                   label=f"mIoU {100.0 * report.miou:.2f}")
        ax.legend(loc="lower right")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("IoU (%)")
    ax.set_ylim(0, 105)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_curves(rows: list[dict], path: str | Path) -> Path:
    """Loss and learning-rate curves; validation mIoU as markers when present.

    Rows come from the metrics table: iteration, loss, lr, optional val_miou.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    its = [r["iteration"] for r in rows]
    losses = [r["loss"] for r in rows]
    lrs = [r["lr"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(its, losses, color="#4878a8", linewidth=1.2, label="train loss")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(its, lrs, color="#888888", linestyle=":", linewidth=1, label="lr")
    ax2.set_ylabel("learning rate")
    val_its = [r["iteration"] for r in rows if r.get("val_miou") is not None]
    val_vals = [r["val_miou"] for r in rows if r.get("val_miou") is not None]
    if val_its:
        ax.plot(val_its, val_vals, "o-", color="#b04030", linewidth=1, markersize=4, label="val mIoU")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
