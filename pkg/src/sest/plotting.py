"""Report figures written next to the CSV outputs."""

from __future__ import annotations

import io
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ._atomic import atomic_write  # noqa: E402

GOLDEN = (5 ** 0.5 - 1) / 2
WIDTH_IN = 5.0

RC = {
    "figure.figsize": (WIDTH_IN, WIDTH_IN * GOLDEN),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.autolayout": True,
}


def new(nrows: int = 1, ncols: int = 1, scale: float = 1.0):
    with plt.rc_context(RC):
        w, h = RC["figure.figsize"]
        fig, ax = plt.subplots(nrows, ncols, figsize=(w * scale * max(1, ncols / 2), h * scale * nrows))
    return fig, ax


def save(fig, path) -> None:
    buf = io.BytesIO()
    with plt.rc_context(RC):
        fig.savefig(buf, format="png")
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_history(history: Sequence, path) -> None:
    """Train/validation loss per epoch, learning rate on a twin log axis."""
    epochs = [r.epoch for r in history]
    fig, ax = new()
    ax.plot(epochs, [r.train_loss for r in history], marker="o", label="train")
    ax.plot(epochs, [r.val_loss for r in history], marker="s", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    lr_ax = ax.twinx()
    lr_ax.step(epochs, [r.lr for r in history], where="post", color="0.6", linestyle=":")
    lr_ax.set_yscale("log")
    lr_ax.set_ylabel("learning rate", color="0.4")
    ax.legend(loc="upper right")
    save(fig, path)


def plot_metrics(reports: Mapping[str, object], path, title: Optional[str] = None) -> None:
    """Grouped bars, one group per metric and one bar per named report."""
    fields = ("auc_j", "cc", "sim", "nss")
    names = list(reports)
    width = 0.8 / max(1, len(names))
    fig, ax = new()
    x = np.arange(len(fields))
    for i, name in enumerate(names):
        vals = [getattr(reports[name], f) for f in fields]
        ax.bar(x + i * width, [np.nan if v is None else v for v in vals], width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2)
    ax.set_xticklabels(["AUC-J", "CC", "SIM", "NSS"])
    ax.axhline(0, color="k", linewidth=0.6)
    if title:
        ax.set_title(title)
    ax.legend()
    save(fig, path)


def plot_maps(pred: np.ndarray, gt: Optional[np.ndarray], path, fixations=None) -> None:
    """Per-bin predicted maps, with ground truth underneath when given."""
    pred = np.asarray(pred)
    bins = pred.shape[0]
    rows = 1 if gt is None else 2
    fig, axes = plt.subplots(rows, bins, figsize=(1.6 * bins + 0.4, 1.7 * rows), squeeze=False)
    for b in range(bins):
        axes[0, b].imshow(pred[b], cmap="magma", vmin=0, vmax=1)
        axes[0, b].set_title(f"bin {b}", fontsize=8)
        if gt is not None:
            axes[1, b].imshow(gt[b], cmap="magma", vmin=0, vmax=1)
            if fixations is not None and len(fixations[b]):
                xs, ys = zip(*fixations[b].points)
                axes[1, b].scatter(xs, ys, s=2, c="cyan")
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    axes[0, 0].set_ylabel("pred", fontsize=8)
    if gt is not None:
        axes[1, 0].set_ylabel("gt", fontsize=8)
    save(fig, path)
