"""Figures for runs: learning curves, ablation curves, confusion heatmaps.

PNG metadata is stripped of timestamps and software tags so that the
same inputs always produce byte-identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ConfusionMatrix  # noqa: E402
from .train import AblationPoint, TrainingLog  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_learning_curves(log: TrainingLog, path: str | Path) -> Path:
    """Loss and accuracy per epoch; the stage boundary is marked with a dashed line."""
    records = log.records
    x = np.arange(1, len(records) + 1)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(x, [r.train_loss for r in records], label="train")
    ax_loss.plot(x, [r.val_loss for r in records], label="validation")
    ax_acc.plot(x, [r.train_accuracy for r in records], label="train")
    ax_acc.plot(x, [r.val_accuracy for r in records], label="validation")
    boundary = len(log.stage(1))
    for ax, title in ((ax_loss, "loss"), (ax_acc, "accuracy")):
        if 0 < boundary < len(records):
            ax.axvline(boundary + 0.5, color="grey", linestyle="--", linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_title(title)
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(points: Sequence[AblationPoint], f1_path: str | Path, time_path: str | Path) -> tuple[Path, Path]:
    points = sorted(points, key=lambda p: p.size)
    sizes = [p.size for p in points]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [p.macro_f1 for p in points], marker="o", label="macro f1")
    ax.plot(sizes, [p.weighted_f1 for p in points], marker="s", label="weighted f1")
    ax.set_xlabel("training images per class")
    ax.set_ylabel("f1")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    a = _save(fig, f1_path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, [p.train_seconds / 60.0 for p in points], marker="o")
    ax.set_xlabel("training images per class")
    ax.set_ylabel("training time (min)")
    fig.tight_layout()
    b = _save(fig, time_path)
    return a, b


def plot_confusion(cm: ConfusionMatrix, path: str | Path, title: str = "") -> Path:
    counts = np.asarray(cm.counts)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(cm.labels)), [str(l) for l in cm.labels])
    ax.set_yticks(range(len(cm.labels)), [str(l) for l in cm.labels])
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    threshold = counts.max() / 2 if counts.size else 0
    for (i, j), v in np.ndenumerate(counts):
        ax.text(j, i, str(v), ha="center", va="center", fontsize=7,
                color="white" if v > threshold else "black")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return _save(fig, path)
