"""Figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .training import read_metrics  # noqa: E402


def plot_training_curves(runs: dict, out_path) -> Path:
    """One line per run in three panels: train loss, validation metric, support size.

    ``runs`` maps a label to a metrics CSV path or to already-parsed rows.
    """
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    panels = [("train_loss", "train loss"), ("valid_metric", "validation metric"),
              ("mean_support_size", "mean support size")]
    for label, src in runs.items():
        rows = read_metrics(src) if isinstance(src, (str, Path)) else src
        epochs = [int(r["epoch"]) for r in rows]
        for ax, (col, _) in zip(axes, panels):
            ax.plot(epochs, [float(r[col]) for r in rows], marker="o", ms=3, label=label)
    for ax, (_, title) in zip(axes, panels):
        ax.set_xlabel("epoch")
        ax.set_title(title)
        ax.grid(alpha=0.3)
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_posterior(entries: list[dict], out_path, title: str | None = None) -> Path:
    """Bar chart of support trees (labelled by head vector) and their probabilities."""
    entries = sorted(entries, key=lambda e: -e["prob"])
    labels = [" ".join(str(h) for h in e["heads"]) for e in entries]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(entries) + 2), 3.2))
    ax.bar(range(len(entries)), [e["prob"] for e in entries], color="tab:blue")
    ax.set_xticks(range(len(entries)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8, family="monospace")
    ax.set_ylabel("posterior probability")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
