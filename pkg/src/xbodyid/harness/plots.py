"""Static figures: mining-statistics curves and similarity heatmaps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_mining_stats(epochs: Sequence[int], pos_cross: Sequence[float], neg_same: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, pos_cross, marker="o", label="hard positive from other domain")
    ax.plot(epochs, neg_same, marker="s", label="hard negative from same domain")
    ax.set_xlabel("epoch")
    ax.set_ylabel("% of anchors")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_heatmap(scores: np.ndarray, labels: Sequence[str], path, title: str = "cosine similarity") -> Path:
    n = len(labels)
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * n, 1.0 + 0.8 * n))
    im = ax.imshow(scores, vmin=-1, vmax=1, cmap="viridis")
    ax.set_xticks(range(n), labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(n), labels, fontsize=8)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{scores[i, j]:.2f}", ha="center", va="center", fontsize=7,
                    color="black" if scores[i, j] > 0.3 else "white")
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
