"""Figures written next to the CSV outputs of ``train`` and ``flops``."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
}


def plot_history(history, path):
    epochs = [r.epoch for r in history.records]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_m) = plt.subplots(1, 2, figsize=(8, 3))
        ax_loss.plot(epochs, [r.train_loss for r in history.records], marker="o", ms=3)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_m.plot(epochs, [r.eval.mean_dsc for r in history.records], marker="o", ms=3, label="mean DSC")
        ax_m.plot(epochs, [r.eval.mean_iou for r in history.records], marker="s", ms=3, label="mean IoU")
        ax_m.set_xlabel("epoch")
        ax_m.set_ylim(0, 1)
        ax_m.legend(loc="lower right", frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_cost(report, path):
    """Horizontal bars of GMac per module, parameter counts annotated."""
    rows = report.rows
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 0.28 * max(len(rows), 1) + 1.2))
        y = np.arange(len(rows))
        ax.barh(y, [r.macs / 1e9 for r in rows], color="tab:blue")
        ax.set_yticks(y)
        ax.set_yticklabels([r.path for r in rows])
        ax.invert_yaxis()
        ax.set_xlabel("GMac")
        ax.set_title(f"total {report.gmac:.2f} GMac, {report.total_params / 1e6:.2f} M params")
        for yi, r in zip(y, rows):
            ax.text(r.macs / 1e9, yi, f" {r.params / 1e6:.2f}M", va="center", fontsize=7)
        fig.savefig(path)
        plt.close(fig)


def plot_prediction(image, mask, path, num_classes, truth=None):
    """Image, predicted mask and optionally the true mask side by side, labels on one color scale."""
    panels = [("image", np.clip(np.transpose(image, (1, 2, 0)), 0, 1)), ("prediction", mask)]
    if truth is not None:
        panels.append(("truth", truth))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.5 * len(panels), 2.6))
        for ax, (title, img) in zip(axes, panels):
            if img.ndim == 3:
                ax.imshow(img, interpolation="nearest")
            else:
                ax.imshow(img, cmap="viridis", vmin=0, vmax=num_classes - 1, interpolation="nearest")
            ax.set_title(title)
            ax.axis("off")
        fig.savefig(path)
        plt.close(fig)
