"""Figures written next to the CSV outputs. Headless (Agg) only."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _masked_counts(row):
    return [len(v) for k, v in row.items() if k.startswith("masked_p")]


def plot_training(rows, path, title=""):
    """Loss, test accuracy and mean masked-layer count per epoch."""
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        ax1.plot(epochs, [r["loss"] for r in rows], color="0.2", label="train loss")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss")
        acc = ax1.twinx()
        acc.plot(epochs, [r["test_acc"] for r in rows], color="tab:blue", label="test acc")
        if "attack_acc" in rows[0]:
            acc.plot(epochs, [r["attack_acc"] for r in rows], color="tab:red", label="attack acc")
        acc.set_ylim(0, 1)
        acc.set_ylabel("accuracy")
        acc.legend(loc="center right", frameon=False)

        counts = [sum(_masked_counts(r)) / max(len(_masked_counts(r)), 1) for r in rows]
        ax2.step(epochs, counts, where="mid", color="tab:purple")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("masked layers (mean over parties)")
        ax2.set_ylim(bottom=0)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_sweep(rows, path):
    """Attack accuracy, main accuracy and mask ratio against the privacy budget."""
    b = [r["budget"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        ax.plot(b, [r["attack_acc"] for r in rows], "o-", color="tab:red", label="attack acc")
        ax.plot(b, [r["main_acc"] for r in rows], "s-", color="tab:blue", label="main acc")
        ax.plot(b, [r["mask_ratio"] for r in rows], "^-", color="tab:purple", label="mask ratio")
        ax.plot(b, b, ":", color="0.5", label="budget")
        ax.invert_xaxis()
        ax.set_xlabel("privacy budget")
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
