"""Static SVG figures: ROC curves and the sweep accuracy heat map."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date stamp so identical data give identical files
_RC = {"svg.hashsalt": "msrc", "svg.fonttype": "none"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def roc_svg(points, path, title: str = "ROC") -> Path:
    pts = np.asarray(points, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(pts[:, 0], pts[:, 1], lw=1.5)
        ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, Path(path))


def sweep_heatmap(sw_values, k_values, accuracy, path, title: str = "accuracy by window size and level") -> Path:
    """``accuracy`` is a ``(len(sw_values), len(k_values))`` array; NaN marks skipped cells."""
    acc = np.asarray(accuracy, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(np.ma.masked_invalid(acc), origin="lower", cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(k_values)), [str(k) for k in k_values])
        ax.set_yticks(range(len(sw_values)), [str(s) for s in sw_values])
        ax.set_xlabel("decomposition level k")
        ax.set_ylabel("window size sw")
        for i in range(acc.shape[0]):
            for j in range(acc.shape[1]):
                ax.text(j, i, "skip" if np.isnan(acc[i, j]) else f"{acc[i, j]:.3f}",
                        ha="center", va="center", fontsize=8, color="white")
        fig.colorbar(im, ax=ax, label="mean accuracy")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, Path(path))
