"""Dataclass configs and the flat key = value config-file format.

Every key has a default except where noted; unknown keys in a config file are
rejected by name so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .stmap import RATIO_BIN


@dataclass
class SynthConfig:
    """Dataset generation. All keys optional; seed fixes everything."""

    n_train: int = 256
    n_test: int = 64
    f0_min: float = 0.8
    f0_max: float = 3.0
    fs: float = 30.0
    n_frames: int = 128           # source clip length L
    n_rois: int = 16              # must be a perfect square
    harmonic_amps: tuple = (1.0, 0.3)
    noise_sigma: float = 0.05
    drift_amp: float = 0.05
    drift_freq: float = 0.1
    seed: int = 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["harmonic_amps"] = list(self.harmonic_amps)
        return d


@dataclass
class TrainConfig:
    """Training-loop configuration. `dataset` is required."""

    dataset: str = ""             # required: path to a generated dataset
    epochs: int = 50
    batch_size: int = 16
    lr: float = 3e-4              # desk-scale default; see README on overriding
    weight_decay: float = 0.01
    seed: int = 0
    deterministic: bool = False

    # model
    map_size: int = 64            # F: STMap side and crop length
    patch: int = 8
    embed_dim: int = 64
    sim_dim: int = 64
    vision_depth: int = 4
    text_depth: int = 2
    heads: int = 4
    decoder_blocks: int = 3

    # augmentation
    k_neg: int = 3
    mask_ratio: float = 0.6
    template: str = "default"
    swap_sides: bool = False

    # losses
    tau1: float = 0.07
    tau2: float = 0.08
    psd_n_fft: int = 512
    w_recon: float = 1.0
    w_vtc: float = 1.0
    w_fc: float = 1.0
    w_fr: float = 1.0
    vtc_include_positive: bool = False
    vtc_pooled_batch: bool = False
    psd_normalized: bool = True
    recon_masked_only: bool = False
    use_afr: bool = False         # replace the ranking loss by absolute-ratio regression

    # supervision mode: fraction of train anchors with ground-truth signals
    # 0.0 = fully self-supervised, 1.0 = fully supervised
    supervised_fraction: float = 0.0

    checkpoint_every: int = 0     # extra checkpoint every N epochs (0 = final only)

    def validate(self):
        if not self.dataset:
            raise KeyError("missing config key: dataset")
        if not 0.0 <= self.supervised_fraction <= 1.0:
            raise ValueError("supervised_fraction must be in [0, 1]")

    @property
    def mode(self) -> str:
        if self.supervised_fraction == 0.0:
            return "self-supervised"
        if self.supervised_fraction == 1.0:
            return "supervised"
        return "semi-supervised"


_BOOL_STRINGS = {"true": True, "1": True, "yes": True,
                 "false": False, "0": False, "no": False}


def _coerce(raw: str, target_type):
    if target_type is bool:
        key = raw.strip().lower()
        if key not in _BOOL_STRINGS:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL_STRINGS[key]
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is tuple:
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return raw


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = raw.strip()
    return values


def build_config(cls, values: dict[str, str], overrides: dict | None = None):
    """Instantiate a config dataclass from string values, rejecting unknown keys."""
    known = {f.name: f.type for f in fields(cls)}
    type_map = {f.name: type(f.default) if f.default is not None else str
                for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise KeyError(f"unknown config key: {key}")
        kwargs[key] = _coerce(raw, type_map[key])
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def split_config_values(values: dict[str, str]):
    """Split a flat key/value dict into synth and train sections.

    Keys known to both configs (seed, fs) land in both. Unknown keys raise.
    """
    synth_keys = {f.name for f in fields(SynthConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    synth, train = {}, {}
    for key, raw in values.items():
        hit = False
        if key in synth_keys:
            synth[key] = raw
            hit = True
        if key in train_keys:
            train[key] = raw
            hit = True
        if not hit:
            raise KeyError(f"unknown config key: {key}")
    return synth, train


def default_config_text() -> str:
    """Documented template listing every key with its default."""
    lines = ["# dataset generation"]
    for f in fields(SynthConfig):
        default = f.default if not isinstance(f.default, tuple) else \
            " ".join(str(x) for x in f.default)
        lines.append(f"{f.name} = {default}")
    lines.append("")
    lines.append("# training (dataset path is required for `train`)")
    for f in fields(TrainConfig):
        if f.name in {"seed"}:
            continue
        lines.append(f"{f.name} = {f.default}")
    return "\n".join(lines) + "\n"
