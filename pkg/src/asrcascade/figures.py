"""Matplotlib renderings of the report outputs.

Every renderer writes a PNG next to the delimited output it mirrors and
returns the path. All figures use the Agg backend so report generation
works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .routing import SweepRow  # noqa: E402


def render_matrix(matrix: Sequence[Sequence[float]], models: Sequence[str], path: str | Path) -> Path:
    """Heatmap of the pairwise at-least-as-good percentages."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(1.2 * len(models) + 2, 1.0 * len(models) + 1.5))
    im = ax.imshow(matrix, cmap="viridis", vmin=0, vmax=100)
    ax.set_xticks(range(len(models)), labels=models)
    ax.set_yticks(range(len(models)), labels=models)
    for i in range(len(models)):
        for j in range(len(models)):
            ax.text(j, i, f"{matrix[i][j]:.0f}", ha="center", va="center", color="w")
    ax.set_xlabel("model j")
    ax.set_ylabel("model i")
    ax.set_title("% of utterances where model i scores at least as well as j")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep(
    rows: Sequence[SweepRow],
    endpoints: Sequence[tuple[float, float, str]],
    path: str | Path,
) -> Path:
    """Threshold sweep in the (MACs, WER) plane.

    ``endpoints`` are (total_macs, mean_wer, name) reference points; the
    first and last are joined by a straight line so operating points can be
    read against the naive interpolation between the two fixed models.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    ax.scatter(
        [r.total_macs for r in rows],
        [r.mean_wer for r in rows],
        c=[r.h for r in rows],
        cmap="coolwarm",
        label="threshold sweep",
        zorder=3,
    )
    for macs, wer, name in endpoints:
        ax.scatter([macs], [wer], marker="x", s=90, color="k", zorder=4)
        ax.annotate(name, (macs, wer), textcoords="offset points", xytext=(6, 6))
    if len(endpoints) >= 2:
        (m0, w0, _), (m1, w1, _) = endpoints[0], endpoints[-1]
        ax.plot([m0, m1], [w0, w1], color="k", linewidth=1, zorder=2)
    ax.set_xlabel("total MACs")
    ax.set_ylabel("mean sentence WER")
    ax.set_title("accuracy / compute trade-off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_history(history, path: str | Path) -> Path:
    """Training curve: mean train loss and validation accuracy per epoch."""
    path = Path(path)
    epochs = [h.epoch for h in history]
    fig, ax1 = plt.subplots(figsize=(6.4, 4.0))
    ax1.plot(epochs, [h.train_loss for h in history], color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(
        epochs, [h.val_accuracy for h in history], color="tab:orange", label="val accuracy"
    )
    ax2.set_ylabel("validation accuracy (%)", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_wer_scatter(
    xs: Sequence[float], ys: Sequence[float], names: tuple[str, str], path: str | Path
) -> Path:
    """Per-utterance WER of one model against another."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.8, 4.8))
    ax.scatter(xs, ys, s=12, alpha=0.6)
    lim = max([*xs, *ys, 1.0]) * 1.05
    ax.plot([0, lim], [0, lim], color="k", linewidth=0.8)
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel(f"WER {names[0]}")
    ax.set_ylabel(f"WER {names[1]}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
