"""Figure rendering for the report paths. Everything writes PNG files via
the Agg backend; no display is ever opened."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_TAG_COLORS = {"NORMAL": "tab:gray", "T1": "tab:red", "T2": "tab:orange",
               "T3": "tab:purple"}


def save_loss_curve(history, path):
    steps = np.arange(len(history))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [r.total for r in history], label="total", lw=1.0)
    ax.plot(steps, [r.contrast for r in history], label="contrast",
            lw=0.8, alpha=0.7)
    ax.plot(steps, [r.generation for r in history], label="generation",
            lw=0.8, alpha=0.7)
    boundaries = [i for i in range(1, len(history))
                  if history[i].epoch != history[i - 1].epoch]
    for b in boundaries:
        ax.axvline(b, color="0.85", lw=0.6, zorder=0)
    ax.set_xlabel("batch step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_curve(rows, r2, path):
    x = np.asarray([r.n_edges for r in rows], dtype=np.float64)
    y = np.asarray([r.total_s for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, "o", color="tab:blue")
    if x.shape[0] >= 2:
        a, b = np.polyfit(x, y, 1)
        grid = np.linspace(x.min(), x.max(), 50)
        ax.plot(grid, a * grid + b, "-", color="tab:blue", alpha=0.5,
                label=f"linear fit, R²={r2:.4f}")
        ax.legend(frameon=False)
    ax.set_xlabel("edges processed")
    ax.set_ylabel("total seconds")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(records, path):
    """Score histogram, split by label when labels are present."""
    scores = np.asarray([r.sc for r in records])
    labels = [r.label for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(0.0, 1.0, 51)
    if any(lab is not None for lab in labels):
        normal = scores[[lab is not True for lab in labels]]
        abnormal = scores[[lab is True for lab in labels]]
        ax.hist(normal, bins=bins, alpha=0.6, label="normal", color="tab:gray")
        ax.hist(abnormal, bins=bins, alpha=0.6, label="abnormal",
                color="tab:red")
        ax.legend(frameon=False)
    else:
        ax.hist(scores, bins=bins, color="tab:blue", alpha=0.8)
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _gaussian_kde(samples, grid):
    """Scott's-rule Gaussian kernel density estimate on a grid."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    spread = samples.std()
    if spread == 0.0:
        spread = 1e-3
    bw = spread * n ** (-1.0 / 5.0)
    z = (grid[:, None] - samples[None, :]) / bw
    return np.exp(-0.5 * z * z).sum(axis=1) / (n * bw * np.sqrt(2 * np.pi))


def save_type_distributions(pairs, path):
    """Kernel-density curves of scores per anomaly type tag."""
    grid = np.linspace(0.0, 1.0, 200)
    fig, ax = plt.subplots(figsize=(6, 4))
    for tag in ("NORMAL", "T1", "T2", "T3"):
        values = [score for t, score in pairs if t == tag]
        if not values:
            continue
        ax.plot(grid, _gaussian_kde(values, grid), label=f"{tag} (n={len(values)})",
                color=_TAG_COLORS[tag])
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
