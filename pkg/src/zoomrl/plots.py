"""Figure rendering for the report paths (compare, sweep).

All figures go to PNG files next to the CSV output; nothing opens a
display (Agg backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _eval_series(metrics, attr):
    xs = [m.iteration for m in metrics if getattr(m, attr) is not None]
    ys = [getattr(m, attr) for m in metrics if getattr(m, attr) is not None]
    return xs, ys


def comparison_figure(metrics_a, metrics_b, out_dir, label_a="run A", label_b="run B"):
    """Two panels: eval accuracy trajectories and the smoothed ratio of
    valid grounding coordinates during training rollouts."""
    from .trainer import moving_average

    out_dir = Path(out_dir)

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for attr, style in (("eval_ood_accuracy", "-o"), ("eval_id_accuracy", "--s")):
        xs, ys = _eval_series(metrics_a, attr)
        if xs:
            axes[0].plot(xs, ys, style, label=f"{label_a} {attr.split('_')[1]}")
        xs, ys = _eval_series(metrics_b, attr)
        if xs:
            axes[0].plot(xs, ys, style, alpha=0.6, label=f"{label_b} {attr.split('_')[1]}")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("accuracy")
    axes[0].set_title("greedy eval accuracy")
    axes[0].legend(fontsize=8)

    for ms, label, alpha in ((metrics_a, label_a, 1.0), (metrics_b, label_b, 0.6)):
        series = [m.valid_ground_ratio for m in ms if m.valid_ground_ratio is not None]
        if series:
            axes[1].plot(moving_average(series), alpha=alpha, label=label)
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("valid grounding ratio (10-iter MA)")
    axes[1].set_title("valid coordinates during rollouts")
    axes[1].legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(out_dir / "compare.png", dpi=120)
    plt.close(fig)


def sweep_figure(rows, out_path):
    """Grouped bars: eval accuracy per budget and mode."""
    budgets = sorted({r["budget"] for r in rows})
    modes = sorted({r["mode"] for r in rows})
    width = 0.8 / max(len(modes), 1)

    fig, ax = plt.subplots(figsize=(6, 4))
    for j, mode in enumerate(modes):
        xs, ys = [], []
        for i, b in enumerate(budgets):
            cell = [r for r in rows if r["budget"] == b and r["mode"] == mode]
            if cell:
                xs.append(i + j * width)
                ys.append(cell[0]["eval_ood_accuracy"])
        ax.bar(xs, ys, width=width, label=mode)
    ax.set_xticks([i + width * (len(modes) - 1) / 2 for i in range(len(budgets))])
    ax.set_xticklabels([str(b) for b in budgets])
    ax.set_xlabel("max input pixels")
    ax.set_ylabel("final eval accuracy (shifted set)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def training_curve_figure(metrics, out_path, title="training run"):
    """Single-run overview: reward/accuracy plus valid-coordinate trend."""
    from .trainer import moving_average

    fig, ax = plt.subplots(figsize=(7, 4))
    rewards = [m.mean_reward for m in metrics if m.mean_reward is not None]
    valid = [m.valid_ground_ratio for m in metrics if m.valid_ground_ratio is not None]
    if rewards:
        ax.plot(moving_average(rewards), label="mean reward (MA)")
    if valid:
        ax.plot(moving_average(valid), label="valid grounding ratio (MA)")
    xs, ys = _eval_series(metrics, "eval_ood_accuracy")
    if xs:
        ax.plot(xs, ys, "o-", label="eval accuracy (shifted)")
    ax.set_xlabel("iteration")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
