"""Static image and plot emission (debug renders and evaluation figures)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .harness import ground_truth_trace
from .pairs import MaskedCStMap
from .physio import SignalTrace
from .synthgen import SourceClip


def save_map_image(pixels: np.ndarray, path: Path, scale: int = 4) -> None:
    """Write an F x F x 3 map in [0, 1] as a PNG, upscaled for visibility."""
    img = np.clip(pixels, 0.0, 1.0)
    img = np.kron(img, np.ones((scale, scale, 1)))
    plt.imsave(path, img)


def save_mask_image(pixels: np.ndarray, masked: MaskedCStMap, path: Path,
                    scale: int = 4) -> None:
    """Render a map with its masked patches grayed out."""
    img = np.clip(pixels, 0.0, 1.0).copy()
    p = masked.patch
    per_side = masked.map_size // p
    for pos in masked.masked_positions:
        r, c = divmod(int(pos), per_side)
        img[r * p:(r + 1) * p, c * p:(c + 1) * p, :] = 0.5
    save_map_image(img, path, scale)


def _normalized(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    rng = np.ptp(x)
    return (x - x.mean()) / (rng if rng > 0 else 1.0)


def overlay_plot(pred_traces: list[SignalTrace], clips: list[SourceClip],
                 f: int, path: Path) -> None:
    """Predicted pulse signals over the reference traces, a panel per clip."""
    n = len(pred_traces)
    fig, axes = plt.subplots(n, 1, figsize=(8, 1.6 * n), sharex=True, squeeze=False)
    for ax, trace, clip in zip(axes[:, 0], pred_traces, clips):
        start = (clip.n_frames - f) // 2
        gt = ground_truth_trace(clip, start, f)
        t = np.arange(f) / clip.fs
        ax.plot(t, _normalized(gt), color="tab:blue", label="reference")
        ax.plot(t, _normalized(trace.samples), color="tab:red", label="predicted")
        ax.set_ylabel(f"{clip.f0 * 60:.0f} BPM", fontsize=8)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def scatter_plot(gts, preds, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(gts, preds, s=12, alpha=0.7)
    lo = min(min(gts), min(preds))
    hi = max(max(gts), max(preds))
    ax.plot([lo, hi], [lo, hi], "k--", linewidth=1)
    ax.set_xlabel("ground-truth HR (BPM)")
    ax.set_ylabel("estimated HR (BPM)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bland_altman_plot(gts, preds, limits: tuple[float, float, float],
                      path: Path) -> None:
    gts = np.asarray(gts)
    preds = np.asarray(preds)
    mean_diff, lower, upper = limits
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter((gts + preds) / 2, preds - gts, s=12, alpha=0.7)
    for y, style in ((mean_diff, "-"), (lower, "--"), (upper, "--")):
        ax.axhline(y, color="gray", linestyle=style, linewidth=1)
    ax.set_xlabel("mean HR (BPM)")
    ax.set_ylabel("estimated - ground truth (BPM)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
