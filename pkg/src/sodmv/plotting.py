"""Report figures written to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import EvalReport  # noqa: E402
from .training import EpochRecord  # noqa: E402


def plot_training_curves(log: Sequence[EpochRecord], path: str | Path, title: str = "training") -> Path:
    """Train loss and dev log-likelihood per epoch, side by side."""
    epochs = [r.epoch for r in log]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(epochs, [r.train_loss for r in log], marker="o")
    a.set_xlabel("epoch")
    a.set_ylabel("train loss")
    b.plot(epochs, [r.dev_ll for r in log], marker="o", color="tab:green")
    b.set_xlabel("epoch")
    b.set_ylabel("dev log-likelihood")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None}, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_uas_buckets(report: EvalReport, path: str | Path) -> Path:
    names = list(report.buckets)
    values = [report.buckets[n][0] for n in names]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, values, color="tab:blue")
    ax.set_ylim(0, 1)
    ax.set_xlabel("sentence length")
    ax.set_ylabel("UAS")
    ax.set_title(f"UAS by length (punct {report.punct_policy.value})")
    for x, v in enumerate(values):
        ax.text(x, min(v, 0.95) + 0.02, f"{v:.3f}", ha="center")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None}, dpi=100)
    plt.close(fig)
    return Path(path)
