"""Synthetic pulse-bearing source clips with known ground-truth frequency.

A source clip stands in for a face video after ROI averaging: an A x L x 3
array of per-ROI color traces whose oscillation frequency is known exactly.
Datasets are written to disk as one small binary file per clip plus a JSON
manifest.
"""

from __future__ import annotations

import json
import shutil
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .physio import SignalTrace

MAGIC = b"STMP"
FORMAT_VERSION = 1

# Relative pulse strength per color channel; green carries the strongest
# pulsatile component.
CHANNEL_WEIGHTS = (0.4, 1.0, 0.6)
BASELINE_COLOR = (0.60, 0.45, 0.40)

PHASE_JITTER_RAD = 0.2
AMP_JITTER = (0.8, 1.2)


class DatasetFormatError(ValueError):
    """Raised when a stored clip file or manifest is malformed."""


@dataclass
class WaveSpec:
    """Parameters of the synthetic pulse waveform."""

    f0: float                    # fundamental frequency, Hz
    harmonic_amps: tuple = (1.0, 0.3)
    fs: float = 30.0
    n_frames: int = 128
    noise_sigma: float = 0.0
    drift_amp: float = 0.0
    drift_freq: float = 0.1
    seed: int = 0

    def validate(self):
        if not 0.75 <= self.f0 <= 4.0:
            raise ValueError(f"f0={self.f0} outside the plausible pulse range [0.75, 4] Hz")
        if len(self.harmonic_amps) == 0:
            raise ValueError("harmonic_amps must not be empty")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.n_frames <= 0:
            raise ValueError("n_frames must be positive")
        if self.fs <= 2.0 * self.f0 * len(self.harmonic_amps):
            raise ValueError(
                f"fs={self.fs} violates Nyquist for harmonic {len(self.harmonic_amps)} "
                f"of f0={self.f0}")


@dataclass
class SourceClip:
    """Per-ROI color traces (A x L x 3) with known pulse frequency."""

    traces: np.ndarray
    f0: float
    fs: float
    roi_grid: tuple[int, int]

    def __post_init__(self):
        a = self.roi_grid[0] * self.roi_grid[1]
        if self.traces.shape[0] != a or self.traces.ndim != 3 or self.traces.shape[2] != 3:
            raise ValueError(f"traces shape {self.traces.shape} inconsistent with grid {self.roi_grid}")

    @property
    def n_rois(self) -> int:
        return self.traces.shape[0]

    @property
    def n_frames(self) -> int:
        return self.traces.shape[1]


@dataclass
class ManifestEntry:
    id: str
    file: str
    f0: float
    fs: float
    a: int
    l: int
    split: str


@dataclass
class DatasetManifest:
    version: int
    samples: list[ManifestEntry]
    generator: dict = field(default_factory=dict)

    def split_ids(self, split: str) -> list[str]:
        return [s.id for s in self.samples if s.split == split]


def gen_wave(spec: WaveSpec, phase: float = 0.0,
             rng: np.random.Generator | None = None) -> SignalTrace:
    """Harmonic pulse waveform plus optional drift and Gaussian noise.

    Deterministic for a given (spec.seed, phase) when no rng is supplied.
    """
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.n_frames, dtype=np.float64) / spec.fs
    s = np.zeros_like(t)
    for h, amp in enumerate(spec.harmonic_amps):
        s += amp * np.sin(2.0 * np.pi * (h + 1) * spec.f0 * t + phase)
    if spec.drift_amp != 0.0:
        s += spec.drift_amp * np.sin(2.0 * np.pi * spec.drift_freq * t)
    if spec.noise_sigma > 0.0:
        s += rng.normal(0.0, spec.noise_sigma, size=len(t))
    return SignalTrace(samples=s, fs=spec.fs)


def gen_source_clip(spec: WaveSpec, a: int,
                    rng: np.random.Generator | None = None) -> SourceClip:
    """Source clip of `a` ROI traces sharing one pulse frequency.

    Each ROI gets a small phase and amplitude jitter; channels are weighted so
    the green channel carries the strongest pulse.
    """
    g = int(round(np.sqrt(a)))
    if g * g != a or g < 2:
        raise ValueError(f"ROI count {a} is not a perfect square >= 4")
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    traces = np.empty((a, spec.n_frames, 3), dtype=np.float64)
    for roi in range(a):
        phase = rng.uniform(-PHASE_JITTER_RAD, PHASE_JITTER_RAD)
        amp = rng.uniform(*AMP_JITTER)
        wave = gen_wave(spec, phase=phase, rng=rng).samples
        for ch in range(3):
            traces[roi, :, ch] = BASELINE_COLOR[ch] + CHANNEL_WEIGHTS[ch] * amp * wave
    return SourceClip(traces=traces, f0=spec.f0, fs=spec.fs, roi_grid=(g, g))


# ---------------------------------------------------------------------------
# binary clip files: magic "STMP", u32 version, u32 dims (A, L, C), then
# row-major little-endian float32
# ---------------------------------------------------------------------------

def write_clip(path: Path, clip: SourceClip) -> None:
    a, l, c = clip.traces.shape
    header = MAGIC + struct.pack("<IIII", FORMAT_VERSION, a, l, c)
    data = clip.traces.astype("<f4").tobytes(order="C")
    path.write_bytes(header + data)


def read_clip(path: Path, f0: float, fs: float) -> SourceClip:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes")
    version, a, l, c = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version}")
    expected = 20 + 4 * a * l * c
    if len(raw) != expected:
        raise DatasetFormatError(f"{path}: size {len(raw)} != expected {expected}")
    traces = np.frombuffer(raw[20:], dtype="<f4").reshape(a, l, c).astype(np.float64)
    g = int(round(np.sqrt(a)))
    return SourceClip(traces=traces, f0=f0, fs=fs, roi_grid=(g, g))


def write_dataset(out_dir: Path, manifest: DatasetManifest,
                  clips: dict[str, SourceClip], force: bool = False) -> None:
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"{out_dir} exists; pass force=True to overwrite")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.samples:
        write_clip(out_dir / entry.file, clips[entry.id])
    payload = {
        "version": manifest.version,
        "generator": manifest.generator,
        "samples": [asdict(e) for e in manifest.samples],
    }
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def read_manifest(dataset_dir: Path) -> DatasetManifest:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DatasetFormatError(f"no manifest.json under {dataset_dir}")
    payload = json.loads(path.read_text())
    samples = [ManifestEntry(**e) for e in payload["samples"]]
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetFormatError("duplicate sample ids in manifest")
    return DatasetManifest(version=payload["version"], samples=samples,
                           generator=payload.get("generator", {}))


def read_dataset(dataset_dir: Path) -> tuple[DatasetManifest, dict[str, SourceClip]]:
    """Load a dataset, checking every clip header against the manifest."""
    dataset_dir = Path(dataset_dir)
    manifest = read_manifest(dataset_dir)
    clips = {}
    for entry in manifest.samples:
        clip = read_clip(dataset_dir / entry.file, f0=entry.f0, fs=entry.fs)
        if clip.traces.shape != (entry.a, entry.l, 3):
            raise DatasetFormatError(
                f"{entry.file}: stored dims {clip.traces.shape} != manifest "
                f"({entry.a}, {entry.l}, 3)")
        clips[entry.id] = clip
    return manifest, clips


def gen_dataset(config, out_dir: Path | None = None,
                force: bool = False) -> tuple[DatasetManifest, dict[str, SourceClip]]:
    """Generate a train/test split of source clips; optionally write to disk.

    A pure function of (config, seed): the same config yields bit-identical
    clips and manifests.
    """
    rng = np.random.default_rng(config.seed)
    n_total = config.n_train + config.n_test
    samples = []
    clips = {}
    for i in range(n_total):
        split = "train" if i < config.n_train else "test"
        f0 = float(rng.uniform(config.f0_min, config.f0_max))
        spec = WaveSpec(f0=f0, harmonic_amps=tuple(config.harmonic_amps),
                        fs=config.fs, n_frames=config.n_frames,
                        noise_sigma=config.noise_sigma,
                        drift_amp=config.drift_amp, drift_freq=config.drift_freq)
        clip = gen_source_clip(spec, a=config.n_rois, rng=rng)
        sid = f"{split}-{i:05d}"
        samples.append(ManifestEntry(id=sid, file=f"{sid}.stmp", f0=f0,
                                     fs=config.fs, a=config.n_rois,
                                     l=config.n_frames, split=split))
        clips[sid] = clip
    manifest = DatasetManifest(version=FORMAT_VERSION, samples=samples,
                               generator=config.as_dict())
    if out_dir is not None:
        write_dataset(out_dir, manifest, clips, force=force)
    return manifest, clips
