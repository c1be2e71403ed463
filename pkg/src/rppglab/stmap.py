"""Spatio-temporal maps and their positive / negative augmentations.

An STMap is an F x F x 3 image whose rows are per-ROI color traces.
Positives come from grid symmetries of the ROI layout (frequency preserved);
negatives come from temporal resampling (frequency multiplied by a known
ratio).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .synthgen import SourceClip

RATIO_BIN = (0.25, 0.5, 0.75, 1.25, 1.5, 1.75, 2.0)

SPATIAL_OPS = ("rot90", "rot180", "rot270", "hflip", "vflip")

NORM_EPS = 1e-8


@dataclass
class StMap:
    """F x F x 3 map, normalized to [0, 1], with its frequency multiplier."""

    pixels: np.ndarray
    fs: float
    f_mult: float = 1.0

    def __post_init__(self):
        f = self.pixels.shape[0]
        if self.pixels.shape != (f, f, 3):
            raise ValueError(f"STMap must be square with 3 channels, got {self.pixels.shape}")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class AugSpec:
    """How many positives/negatives to draw and from which ratio bin."""

    ratio_bin: tuple = RATIO_BIN
    k_neg: int = 3
    n_pos: int = 2
    spatial_ops: tuple = SPATIAL_OPS

    def validate(self):
        if 1.0 in self.ratio_bin:
            raise ValueError("ratio bin must exclude 1.0")
        if self.k_neg < 1:
            raise ValueError("k_neg must be >= 1")
        if self.k_neg > len(self.ratio_bin):
            raise ValueError("cannot sample more distinct ratios than the bin holds")
        if not 1 <= self.n_pos <= len(self.spatial_ops):
            raise ValueError("n_pos must allow distinct spatial ops")


def roi_permutation(op: str, g: int) -> np.ndarray:
    """Index permutation of g*g ROIs induced by a grid symmetry.

    perm[k] is the source ROI index that lands at position k. Rotations are
    counterclockwise.
    """
    idx = np.arange(g * g).reshape(g, g)
    if op == "rot90":
        moved = np.rot90(idx, 1)
    elif op == "rot180":
        moved = np.rot90(idx, 2)
    elif op == "rot270":
        moved = np.rot90(idx, 3)
    elif op == "hflip":
        moved = idx[:, ::-1]
    elif op == "vflip":
        moved = idx[::-1, :]
    else:
        raise ValueError(f"unknown spatial op {op!r}; expected one of {SPATIAL_OPS}")
    return moved.reshape(-1)


def normalize_map(pixels: np.ndarray) -> np.ndarray:
    """Per-channel min-max normalization to [0, 1]; constant channels map to 0.5."""
    out = np.empty_like(pixels, dtype=np.float64)
    for ch in range(pixels.shape[2]):
        lo = pixels[:, :, ch].min()
        hi = pixels[:, :, ch].max()
        if hi - lo < NORM_EPS:
            out[:, :, ch] = 0.5
        else:
            out[:, :, ch] = (pixels[:, :, ch] - lo) / (hi - lo)
    return out


def _replicate_rows(rows: np.ndarray, f: int) -> np.ndarray:
    """Nearest-neighbor resize A -> f on the ROI axis by row replication."""
    a = rows.shape[0]
    if f % a != 0:
        raise ValueError(f"map size {f} must be a multiple of ROI count {a}")
    return np.repeat(rows, f // a, axis=0)


def build_stmap(clip: SourceClip, start: int, f: int) -> StMap:
    """STMap from `f` consecutive frames of a source clip.

    ROI rows become replicated row bands; channels are min-max normalized.
    """
    if start < 0 or start + f > clip.n_frames:
        raise ValueError(f"crop [{start}, {start + f}) out of range for L={clip.n_frames}")
    window = clip.traces[:, start:start + f, :]
    pixels = normalize_map(_replicate_rows(window, f))
    return StMap(pixels=pixels, fs=clip.fs, f_mult=1.0)


def spatial_augment(x, op: str):
    """Apply a ROI-grid symmetry to a clip or an STMap.

    Rows are permuted; the temporal axis and frequency content are untouched.
    """
    if isinstance(x, SourceClip):
        g = x.roi_grid[0]
        perm = roi_permutation(op, g)
        return SourceClip(traces=x.traces[perm], f0=x.f0, fs=x.fs, roi_grid=x.roi_grid)
    if isinstance(x, StMap):
        f = x.size
        # infer the ROI band structure: rows within a band are identical copies
        g2 = _infer_roi_count(x.pixels)
        g = int(round(math.sqrt(g2)))
        perm = roi_permutation(op, g)
        band = f // g2
        bands = x.pixels.reshape(g2, band, f, 3)
        return StMap(pixels=bands[perm].reshape(f, f, 3), fs=x.fs, f_mult=x.f_mult)
    raise TypeError(f"cannot spatially augment {type(x).__name__}")


def _infer_roi_count(pixels: np.ndarray) -> int:
    f = pixels.shape[0]
    unique = 1
    for r in range(1, f):
        if not np.array_equal(pixels[r], pixels[r - 1]):
            unique += 1
    if f % unique != 0:
        raise ValueError("cannot infer ROI bands from map rows")
    return unique


def freq_augment(clip: SourceClip, r: float, f: int,
                 rng: np.random.Generator | None = None,
                 offset: int | None = None) -> StMap:
    """Negative STMap: temporal resampling that multiplies the pulse frequency by r.

    Rows are linearly interpolated at indices offset + r*i for i in [0, f),
    then resized/normalized like a regular STMap.
    """
    if r not in RATIO_BIN:
        raise ValueError(f"ratio {r} not in the allowed bin {RATIO_BIN}")
    if r * f > clip.n_frames:
        raise ValueError(f"source too short: need {r * f:.0f} frames, have {clip.n_frames}")
    if r * clip.f0 >= clip.fs / 2:
        raise ValueError(f"resampled frequency {r * clip.f0:.2f} Hz violates Nyquist")
    span = int(math.ceil(r * (f - 1)))
    max_offset = clip.n_frames - 1 - span
    if offset is None:
        offset = 0 if max_offset == 0 or rng is None else int(rng.integers(0, max_offset + 1))
    if not 0 <= offset <= max_offset:
        raise ValueError(f"offset {offset} leaves indices out of range (max {max_offset})")
    t = offset + r * np.arange(f, dtype=np.float64)
    src_t = np.arange(clip.n_frames, dtype=np.float64)
    resampled = np.empty((clip.n_rois, f, 3), dtype=np.float64)
    for roi in range(clip.n_rois):
        for ch in range(3):
            resampled[roi, :, ch] = np.interp(t, src_t, clip.traces[roi, :, ch])
    pixels = normalize_map(_replicate_rows(resampled, f))
    return StMap(pixels=pixels, fs=clip.fs, f_mult=r)


def make_augmented_set(clip: SourceClip, aug: AugSpec, f: int,
                       rng: np.random.Generator,
                       start: int | None = None):
    """Positives via distinct grid symmetries, negatives via distinct ratios.

    Returns (positives, negatives, ratios) with ratios in generation order.
    """
    aug.validate()
    if start is None:
        start = int(rng.integers(0, clip.n_frames - f + 1))
    ops = rng.choice(len(aug.spatial_ops), size=aug.n_pos, replace=False)
    positives = [build_stmap(spatial_augment(clip, aug.spatial_ops[i]), start, f)
                 for i in ops]
    ratio_idx = rng.choice(len(aug.ratio_bin), size=aug.k_neg, replace=False)
    ratios = [aug.ratio_bin[i] for i in ratio_idx]
    negatives = [freq_augment(clip, r, f, rng=rng) for r in ratios]
    return positives, negatives, ratios
