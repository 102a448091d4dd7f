"""Report figures.  Rendered with the Agg backend straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRICS = ("accuracy", "precision", "recall", "f1")


def _style(ax):
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(direction="out", length=3)


def plot_loss_curves(curves, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for f, curve in enumerate(curves):
        label = f"fold {f}" if len(curves) > 1 else None
        ax.plot(np.arange(1, len(curve) + 1), curve, lw=1.0, alpha=0.8, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean mini-batch loss")
    ax.set_title(title, fontsize=10)
    if 1 < len(curves) <= 10:
        ax.legend(fontsize=6, ncol=2, frameon=False)
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fold_metrics(report, path):
    """Grouped bars, one group per fold plus the mean row."""
    rows = report.folds + [report.mean]
    x = np.arange(len(rows))
    width = 0.8 / len(METRICS)
    fig, ax = plt.subplots(figsize=(max(5.0, 0.55 * len(rows) + 1.5), 3.2))
    for k, name in enumerate(METRICS):
        ax.bar(x + (k - 1.5) * width, [getattr(r, name) for r in rows], width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels([r.fold for r in rows], fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("fold")
    ax.legend(fontsize=7, ncol=4, frameon=False, loc="lower center", bbox_to_anchor=(0.5, 1.0))
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
