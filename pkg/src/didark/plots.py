"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .normalize import NormStats, normalize_array  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    # fixed metadata keeps repeated runs byte-identical
    "svg.hashsalt": "didark",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if window <= 1 or len(values) == 0:
        return values
    c = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_loss_curve(rows: Sequence[Sequence[float]], path: str | Path, window: int = 50) -> Path:
    """Rows are ``(iteration, total, edm, mse, perceptual)``."""
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for col, name in enumerate(["total", "edm", "mse", "perceptual"], start=1):
            ax.plot(data[:, 0], smooth(data[:, col], window), label=name, lw=1.2)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(f"loss ({window}-step mean)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_eval(names: Sequence[str], psnr: Sequence[float], ssim: Sequence[float], path: str | Path) -> Path:
    """Per-image PSNR and SSIM bars."""
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 1, figsize=(max(4, 0.35 * len(names) + 2), 4.5), sharex=True)
        axes[0].bar(x, psnr, color="tab:blue")
        axes[0].set_ylabel("PSNR (dB)")
        axes[0].axhline(np.mean(psnr) if len(psnr) else 0, color="k", lw=0.8, ls="--")
        axes[1].bar(x, ssim, color="tab:orange")
        axes[1].set_ylabel("SSIM")
        axes[1].set_ylim(0, 1.05)
        axes[1].set_xticks(x)
        axes[1].set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        return _save(fig, path)


def plot_stats_histogram(linear: dict[str, np.ndarray], stats: dict[str, NormStats], path: str | Path,
                         bins: int = 100) -> Path:
    """Raw linear intensities next to their tail-normalized values, one row per domain."""
    keys = sorted(linear)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(keys), 2, figsize=(7, 2.6 * len(keys)), squeeze=False)
        for row, key in zip(axes, keys):
            raw = np.asarray(linear[key]).ravel()
            v = np.clip(normalize_array(raw, stats[key]), -1.0, 1.0)
            row[0].hist(raw, bins=bins, color="tab:gray")
            row[0].set_title(f"{key}: linear", fontsize=9)
            row[1].hist(v, bins=bins, range=(-1, 1), color="tab:green")
            row[1].set_title(f"{key}: normalized  mean {v.mean():.3f}  std {v.std():.3f}", fontsize=9)
        fig.tight_layout()
        return _save(fig, path)
