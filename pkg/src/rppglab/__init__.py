"""Desk-scale self-supervised remote pulse estimation from synthetic
spatio-temporal maps."""

__version__ = "0.1.0"

from .config import SynthConfig, TrainConfig
from .physio import SignalTrace, estimate_hr, hrv_features, metrics
from .stmap import RATIO_BIN, AugSpec, StMap
from .synthgen import SourceClip, WaveSpec, gen_dataset

__all__ = [
    "SynthConfig", "TrainConfig", "SignalTrace", "estimate_hr", "hrv_features",
    "metrics", "RATIO_BIN", "AugSpec", "StMap", "SourceClip", "WaveSpec",
    "gen_dataset", "__version__",
]
