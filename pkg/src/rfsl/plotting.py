"""Report figures written next to the CSV outputs.

Uses the non-interactive Agg backend and strips the software tag from the PNG
metadata so the same data always produces the same bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def accuracy_curve(path, n_values: Sequence[int], accuracy: Sequence[float], label: str = "",
                   threshold: float | None = 0.9, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(n_values, accuracy, marker="o", label=label or None)
        if threshold is not None:
            ax.axhline(threshold, color="0.5", linestyle="--", linewidth=1)
        ax.set_xlabel("number of targets N")
        ax.set_ylabel("accuracy")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        if label:
            ax.legend()
        return _save(fig, path)


def grouped_accuracy(path, curves: dict[str, tuple[Sequence[int], Sequence[float]]], title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, (n, acc) in curves.items():
            ax.plot(n, acc, marker="o", label=name)
        ax.axhline(0.9, color="0.5", linestyle="--", linewidth=1)
        ax.set_xlabel("number of targets N")
        ax.set_ylabel("accuracy")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
        return _save(fig, path)


def loss_curve(path, epochs: Sequence[int], train_loss: Sequence[float], val_loss: Sequence[float]) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(epochs, train_loss, label="train")
        ax.semilogy(epochs, val_loss, label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean squared error")
        ax.legend()
        return _save(fig, path)


def scene(path, node_positions: np.ndarray, area: tuple[float, float], targets: np.ndarray | None = None) -> Path:
    """Room outline, node positions and target footprints (rows of x, y, phi, h, w1, w2)."""
    from matplotlib.patches import Ellipse, Rectangle

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 4.2))
        ax.add_patch(Rectangle((0, 0), area[0], area[1], fill=False, color="0.3"))
        ax.plot(node_positions[:, 0], node_positions[:, 1], "^", color="tab:blue", label="nodes")
        if targets is not None:
            for x, y, phi, _h, w1, w2 in targets:
                ax.add_patch(Ellipse((x, y), w1, w2, angle=np.degrees(phi), color="tab:red", alpha=0.6))
        ax.set_aspect("equal")
        pad = 0.05 * max(area)
        ax.set_xlim(-pad, area[0] + pad)
        ax.set_ylim(-pad, area[1] + pad)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        return _save(fig, path)
