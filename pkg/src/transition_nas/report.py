"""Figures rendered next to the delimited run outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_history_figure", "render_eval_figure"]


def render_history_figure(history, path) -> None:
    """Search loss curves and the temperature schedule, stacked."""
    epochs = [r.epoch for r in history]
    fig, (ax_loss, ax_tau) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_loss.plot(epochs, [r.train_loss for r in history], label="train loss", marker="o")
    ax_loss.plot(epochs, [r.val_loss for r in history], label="val loss", marker="s")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_loss.grid(True, alpha=0.3)
    ax_tau.plot(epochs, [r.tau for r in history], color="tab:red", marker=".")
    ax_tau.set_ylabel("temperature")
    ax_tau.set_xlabel("epoch")
    ax_tau.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval_figure(records, path) -> None:
    """Retraining curves: loss on one panel, accuracies on the other."""
    epochs = [r["epoch"] for r in records]
    fig, (ax_loss, ax_acc) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_loss.plot(epochs, [r["train_loss"] for r in records], label="train loss", marker="o")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_loss.grid(True, alpha=0.3)
    ax_acc.plot(epochs, [r["train_acc"] for r in records], label="train acc", marker="o")
    ax_acc.plot(epochs, [r["val_acc"] for r in records], label="val acc", marker="s")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_xlabel("epoch")
    ax_acc.legend()
    ax_acc.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
