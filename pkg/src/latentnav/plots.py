"""Figures: training curves over collected episodes and model reconstructions."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

NONVISUAL_LABELS = (
    "vx", "vy", "wz", "head", "distance", "bearing", "roll", "pitch"
)


def load_episode_log(path) -> list[dict]:
    """Read per-episode summary records from a JSONL file."""
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def windowed_stats(values: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window mean and standard deviation per index."""
    values = np.asarray(values, dtype=float)
    means = np.empty_like(values)
    stds = np.empty_like(values)
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1) : i + 1]
        means[i] = chunk.mean()
        stds[i] = chunk.std()
    return means, stds


def plot_training_curves(run_dirs: list, out_path, window: int = 100) -> None:
    """Episode return and success curves, one line per run, windowed."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_ret, ax_suc) = plt.subplots(1, 2, figsize=(11, 4))
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        records = load_episode_log(run_dir / "episodes.jsonl")
        if not records:
            continue
        returns = np.array([r["return"] for r in records])
        successes = np.array([r["outcome"] == "success" for r in records], dtype=float)
        x = np.arange(1, len(records) + 1)
        mean, std = windowed_stats(returns, window)
        ax_ret.plot(x, mean, label=run_dir.name)
        ax_ret.fill_between(x, mean - std, mean + std, alpha=0.2)
        smean, _ = windowed_stats(successes, window)
        ax_suc.plot(x, smean, label=run_dir.name)
    ax_ret.set_xlabel("collected episodes")
    ax_ret.set_ylabel(f"episode reward (window {window})")
    ax_suc.set_xlabel("collected episodes")
    ax_suc.set_ylabel(f"success rate (window {window})")
    ax_suc.set_ylim(-0.05, 1.05)
    ax_ret.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def reconstruction_rmse(recon: dict[str, np.ndarray]) -> dict[str, float]:
    """Per-channel RMSE of the proprioception reconstruction."""
    err = recon["nonvisual_pred"] - recon["nonvisual_true"]
    rmse = np.sqrt((err ** 2).mean(axis=0))
    return {label: float(r) for label, r in zip(NONVISUAL_LABELS, rmse)}


def plot_reconstruction(recon: dict[str, np.ndarray], out_path) -> dict[str, float]:
    """Overlay decoded proprioception, reward, and terminal indicator traces
    on their recorded ground truth. Returns per-channel RMSE values."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rmse = reconstruction_rmse(recon)
    t = np.arange(len(recon["reward_true"]))
    fig, axes = plt.subplots(5, 2, figsize=(11, 12), sharex=True)
    flat = axes.ravel()
    for k, label in enumerate(NONVISUAL_LABELS):
        ax = flat[k]
        ax.plot(t, recon["nonvisual_true"][:, k], color="k", lw=1.2, label="recorded")
        ax.plot(t, recon["nonvisual_pred"][:, k], color="tab:orange", lw=1.0, label="decoded")
        ax.set_title(f"{label} (rmse {rmse[label]:.4f})", fontsize=9)
    ax = flat[8]
    ax.plot(t, recon["reward_true"], color="k", lw=1.2)
    ax.plot(t, recon["reward_pred"], color="tab:orange", lw=1.0)
    ax.set_title("reward", fontsize=9)
    ax = flat[9]
    ax.plot(t, recon["indicators_true"][:, 0], color="k", lw=1.2, label="success true")
    ax.plot(t, recon["term_pred"][:, 0], color="tab:orange", lw=1.0, label="success decoded")
    ax.plot(t, recon["indicators_true"][:, 1], color="gray", lw=1.2, label="failure true")
    ax.plot(t, recon["term_pred"][:, 1], color="tab:red", lw=1.0, label="failure decoded")
    ax.set_title("terminal indicators", fontsize=9)
    ax.legend(fontsize=7)
    flat[0].legend(fontsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return rmse
