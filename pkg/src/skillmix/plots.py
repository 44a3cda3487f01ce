"""Figure rendering for the report paths.

Every CLI command that writes a delimited report also drops the matching
figure next to it: loss curves beside the training CSV, a mixing-weight
heatmap beside the weight dump, and cost/timing charts beside the benchmark
JSON.  Rendering is headless (Agg) and file-only.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def training_curves(rows: Sequence, out_path) -> None:
    """Loss and attention-error trajectories from the per-epoch log rows."""
    epochs = [r.epoch for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [r.train_token_loss for r in rows], label="train token")
    ax1.plot(epochs, [r.valid_token_loss for r in rows], label="valid token")
    skill = [r.train_skill_loss for r in rows]
    if any(s > 0 for s in skill):
        ax1.plot(epochs, skill, label="train skill")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax1.legend(fontsize=8)
    err = [r.attention_error_rate for r in rows]
    if not all(np.isnan(e) for e in err):
        ax2.plot(epochs, err, color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("attention error rate")
    ax2.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def alpha_heatmap(alphas: Sequence[np.ndarray], skill_names: Sequence[str],
                  out_path, max_rows: int = 60) -> None:
    """Per-example mixing weights as a heatmap, one row per example."""
    if not len(alphas):
        return
    grid = np.stack(list(alphas)[:max_rows])
    fig, ax = plt.subplots(figsize=(0.6 * len(skill_names) + 2, 0.14 * len(grid) + 1.5))
    im = ax.imshow(grid, aspect="auto", cmap="Greys", vmin=0.0)
    ax.set_xticks(range(len(skill_names)))
    ax.set_xticklabels(skill_names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("example")
    fig.colorbar(im, ax=ax, fraction=0.03)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def cost_curves(rows: Sequence[dict], out_path, d: int = 64, n: int = 64,
                r: int = 13) -> None:
    """Symbolic operation counts against sequence length at fixed widths."""
    pts = sorted((row["t"], row["aop"], row["moe"]) for row in rows
                 if row["d"] == d and row["n"] == n and row["r"] == r)
    if not pts:
        return
    t = [p[0] for p in pts]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(t, [p[1] for p in pts], label="parameter mixing")
    ax.plot(t, [p[2] for p in pts], label="representation mixing")
    ax.set_xlabel("sequence length t")
    ax.set_ylabel(f"operations (r={r}, d={d}, n={n})")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def timing_bars(empirical: dict, out_path) -> None:
    """Median wall time of the two mixing regimes on the real decoders."""
    fig, ax = plt.subplots(figsize=(4.0, 3.2))
    labels = ["parameter\nmixing", "representation\nmixing"]
    values = [empirical["aop_median_s"], empirical["aor_median_s"]]
    ax.bar(labels, values, color=["tab:blue", "tab:orange"])
    ax.set_ylabel("median seconds per repetition")
    ax.set_title(f"r={empirical['r']}, ratio {empirical['aor_over_aop']:.2f}x", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
