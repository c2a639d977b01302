"""Figure rendering for the report path: curves saved next to the CSVs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _float(v, default=None):
    try:
        return float(v)
    except (TypeError, ValueError):
        return default


def anytime_curve_figure(rows, path):
    xs, ys = [], []
    for r in rows:
        acc = _float(r["accuracy"])
        if acc is None:
            continue
        xs.append(_float(r["budget"]))
        ys.append(acc)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(xs, ys, where="post", marker="o", ms=3)
    ax.set_xscale("log")
    ax.set_xlabel("anytime budget (FLOPs / sample)")
    ax.set_ylabel("top-1 accuracy")
    ax.set_title("anytime prediction")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def budgeted_curve_figure(rows, path):
    xs = [_float(r["realized_avg_flops"]) for r in rows]
    ys = [_float(r["accuracy"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o", ms=3)
    ax.set_xscale("log")
    ax.set_xlabel("average FLOPs / sample")
    ax.set_ylabel("top-1 accuracy")
    ax.set_title("budgeted batch classification")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    variants = sorted({r["variant"] for r in rows})
    for variant in variants:
        pts = {}
        for r in rows:
            if r["variant"] != variant:
                continue
            pts.setdefault(int(r["classifier"]), []).append(
                (_float(r["flops"]), _float(r["accuracy"]))
            )
        xs = [sum(f for f, _ in v) / len(v) for _, v in sorted(pts.items())]
        ys = [sum(a for _, a in v) / len(v) for _, v in sorted(pts.items())]
        ax.plot(xs, ys, marker="o", ms=4, label=variant)
    ax.set_xscale("log")
    ax.set_xlabel("cumulative FLOPs / sample")
    ax.set_ylabel("top-1 accuracy (mean over seeds)")
    ax.set_title("ablation")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_curves_figure(history, num_classifiers, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    epochs = [m.epoch for m in history]
    ax1.plot(epochs, [m.train_loss for m in history])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    if history and history[0].val_accuracy:
        for k in range(num_classifiers):
            ax2.plot(epochs, [m.val_accuracy[k] for m in history], label=f"clf {k + 1}")
        ax2.legend()
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val accuracy")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
