"""Matplotlib renderings for the CLI report paths (file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def parse_metric_lines(lines):
    """Split a metrics log into (train records, eval records) dicts."""
    train = {"iter": [], "lr": [], "loss": []}
    evals = {"iter": [], "miou": [], "pixacc": []}
    for line in lines:
        fields = dict(part.split("=", 1) for part in line.split() if "=" in part)
        if line.startswith("eval "):
            evals["iter"].append(int(fields["iter"]))
            evals["miou"].append(float(fields["miou"]))
            evals["pixacc"].append(float(fields["pixacc"]))
        elif line.startswith("iter="):
            train["iter"].append(int(fields["iter"]))
            train["lr"].append(float(fields["lr"]))
            train["loss"].append(float(fields["loss"]))
    return train, evals


def save_training_curves(lines, path):
    train, evals = parse_metric_lines(lines)
    fig, (ax_loss, ax_lr) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(train["iter"], train["loss"], lw=0.8, label="loss")
    if evals["iter"]:
        ax_miou = ax_loss.twinx()
        ax_miou.plot(evals["iter"], evals["miou"], "o-", color="tab:green",
                     ms=3, label="train mIoU")
        ax_miou.set_ylabel("mIoU")
        ax_miou.set_ylim(0, 1)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("training loss")
    ax_lr.plot(train["iter"], train["lr"], lw=1.0, color="tab:orange")
    ax_lr.set_xlabel("iteration")
    ax_lr.set_ylabel("learning rate")
    ax_lr.set_title("poly schedule")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_iou_bars(per_class, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    classes = list(range(len(per_class)))
    values = [v if v is not None else 0.0 for v in per_class]
    ax.bar(classes, values, color="tab:blue")
    ax.set_xlabel("class")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1)
    ax.set_title("per-class IoU")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cost_chart(rows, path, top=20):
    ranked = sorted(rows, key=lambda r: r.params, reverse=True)[:top]
    fig, ax = plt.subplots(figsize=(8, max(3, 0.3 * len(ranked))))
    names = [r.name for r in ranked][::-1]
    params = [r.params for r in ranked][::-1]
    ax.barh(names, params, color="tab:purple")
    ax.set_xlabel("parameters")
    ax.set_title(f"heaviest {len(ranked)} layers")
    ax.tick_params(axis="y", labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
