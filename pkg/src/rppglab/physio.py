"""Physiological quantity extraction (HR, HRV, respiration) and error metrics.

Everything here works on plain 1-D numpy signals. Heart rate comes from an
interpolated spectral peak; HRV features come from the Welch spectrum of the
uniformly resampled inter-beat-interval tachogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

PULSE_BAND = (0.75, 4.0)  # plausible pulse frequencies, Hz
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.4)
RF_BAND = (0.1, 0.5)

TACHOGRAM_FS = 4.0  # resampling rate for the IBI tachogram, Hz


@dataclass
class SignalTrace:
    """A 1-D time series with its sampling rate."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("SignalTrace expects a 1-D array")
        if len(self.samples) < 2:
            raise ValueError("SignalTrace needs at least 2 samples")
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs


@dataclass
class HrvFeatures:
    """Normalized-unit LF/HF powers of the tachogram spectrum."""

    lf_nu: float
    hf_nu: float
    lf_hf: float


@dataclass
class MetricReport:
    mae: float
    rmse: float
    pearson_rho: float
    std_err: float
    bland_altman: tuple[float, float, float]  # mean diff, lower, upper limit

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "pearson_rho": self.pearson_rho,
            "std_err": self.std_err,
            "bland_altman_mean": self.bland_altman[0],
            "bland_altman_lower": self.bland_altman[1],
            "bland_altman_upper": self.bland_altman[2],
        }


def _parabolic_refine(power: np.ndarray, idx: int) -> float:
    """3-point parabolic interpolation of a peak location, in bins."""
    if idx <= 0 or idx >= len(power) - 1:
        return float(idx)
    a, b, c = power[idx - 1], power[idx], power[idx + 1]
    denom = a - 2.0 * b + c
    if denom == 0:
        return float(idx)
    delta = 0.5 * (a - c) / denom
    return idx + float(np.clip(delta, -0.5, 0.5))


def spectral_peak(samples: np.ndarray, fs: float, band: tuple[float, float],
                  n_fft: int = 8192) -> float:
    """Frequency (Hz) of the strongest in-band component.

    Mean-removed, Hann-windowed, zero-padded periodogram with 3-point
    parabolic refinement of the argmax bin.
    """
    x = np.asarray(samples, dtype=np.float64)
    x = x - x.mean()
    n_fft = max(n_fft, len(x))
    win = np.hanning(len(x))
    spec = np.abs(np.fft.rfft(x * win, n=n_fft)) ** 2
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fs)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not np.any(in_band):
        raise ValueError(f"band {band} contains no FFT bins at fs={fs}")
    band_idx = np.flatnonzero(in_band)
    peak_local = int(np.argmax(spec[band_idx]))
    peak = band_idx[peak_local]
    if spec[peak] <= 0:
        raise ValueError("signal has no spectral peak (zero power in band)")
    refined = _parabolic_refine(spec, peak)
    return float(refined * fs / n_fft)


def estimate_hr(trace: SignalTrace, band: tuple[float, float] = PULSE_BAND,
                n_fft: int = 8192) -> float:
    """Heart rate in BPM from the interpolated spectral peak of a pulse signal."""
    if len(trace.samples) < 32:
        raise ValueError("signal too short for HR estimation (need >= 32 samples)")
    if np.ptp(trace.samples) == 0:
        raise ValueError("constant signal has no spectral peak")
    if n_fft < 4096:
        raise ValueError("n_fft must be >= 4096 for adequate resolution")
    return 60.0 * spectral_peak(trace.samples, trace.fs, band, n_fft)


def bandpass(samples: np.ndarray, fs: float,
             band: tuple[float, float] = PULSE_BAND, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass."""
    sos = sps.butter(order, band, btype="bandpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, np.asarray(samples, dtype=np.float64))


def _rolling(x: np.ndarray, window: int, fn) -> np.ndarray:
    pad = window // 2
    padded = np.pad(x, pad, mode="reflect")
    out = np.empty_like(x)
    for i in range(len(x)):
        out[i] = fn(padded[i:i + window])
    return out


def detect_peaks(trace: SignalTrace, min_separation_s: float = 0.25,
                 threshold_window_s: float = 2.0) -> np.ndarray:
    """Systolic-peak indices of a pulse signal.

    The signal is band-passed to the pulse band first; peaks are local maxima
    above an adaptive threshold (rolling mean + 0.5 * rolling std) with a
    minimum separation.
    """
    y = bandpass(trace.samples, trace.fs)
    window = max(3, int(round(threshold_window_s * trace.fs)))
    thresh = _rolling(y, window, np.mean) + 0.5 * _rolling(y, window, np.std)
    distance = max(1, int(round(min_separation_s * trace.fs)))
    peaks, _ = sps.find_peaks(y, distance=distance)
    peaks = peaks[y[peaks] > thresh[peaks]]
    if len(peaks) < 2:
        raise ValueError("fewer than 2 peaks detected; signal too short or flat")
    return peaks


def ibi_series(peaks: np.ndarray, fs: float) -> np.ndarray:
    """Inter-beat intervals (seconds) from peak indices."""
    peaks = np.asarray(peaks)
    if len(peaks) < 2:
        raise ValueError("need at least 2 peaks for an IBI series")
    return np.diff(peaks) / float(fs)


def _tachogram_psd(ibis: np.ndarray, n_fft: int = 4096):
    """Welch PSD of the uniformly resampled IBI tachogram."""
    ibis = np.asarray(ibis, dtype=np.float64)
    beat_times = np.cumsum(ibis)
    if beat_times[-1] < 30.0:
        raise ValueError("need at least 30 s of inter-beat intervals")
    grid = np.arange(beat_times[0], beat_times[-1], 1.0 / TACHOGRAM_FS)
    tach = np.interp(grid, beat_times, ibis)
    tach = tach - tach.mean()
    nperseg = min(256, len(tach))
    freqs, psd = sps.welch(tach, fs=TACHOGRAM_FS, nperseg=nperseg, nfft=n_fft)
    return freqs, psd


def _band_power(freqs: np.ndarray, psd: np.ndarray, band: tuple[float, float]) -> float:
    mask = (freqs >= band[0]) & (freqs < band[1])
    if not np.any(mask):
        return 0.0
    return float(np.trapezoid(psd[mask], freqs[mask]))


def hrv_features(ibis: np.ndarray) -> HrvFeatures:
    """LF/HF normalized-unit powers from an IBI series (>= 30 s)."""
    freqs, psd = _tachogram_psd(ibis)
    lf = _band_power(freqs, psd, LF_BAND)
    hf = _band_power(freqs, psd, HF_BAND)
    total = lf + hf
    if total <= 0:
        raise ValueError("zero power in LF+HF bands")
    lf_nu = lf / total
    hf_nu = hf / total
    lf_hf = lf / hf if hf > 0 else float("inf")
    return HrvFeatures(lf_nu=lf_nu, hf_nu=hf_nu, lf_hf=lf_hf)


def estimate_rf(ibis: np.ndarray) -> float:
    """Respiration frequency (Hz): tachogram PSD argmax in the RF band."""
    freqs, psd = _tachogram_psd(ibis)
    mask = (freqs >= RF_BAND[0]) & (freqs <= RF_BAND[1])
    if not np.any(mask) or psd[mask].max() <= 0:
        raise ValueError("no respiratory peak in tachogram spectrum")
    band_idx = np.flatnonzero(mask)
    peak = band_idx[int(np.argmax(psd[band_idx]))]
    refined = _parabolic_refine(psd, peak)
    return float(refined * (freqs[1] - freqs[0]))


def metrics(pred, gt) -> MetricReport:
    """MAE / RMSE / Pearson rho / error Std / Bland-Altman limits."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if len(pred) < 2:
        raise ValueError("need at least 2 values")
    diff = pred - gt
    mae = float(np.mean(np.abs(diff)))
    rmse = float(np.sqrt(np.mean(diff ** 2)))
    if np.std(pred) == 0 or np.std(gt) == 0:
        raise ValueError("zero variance input; Pearson rho undefined")
    rho = float(np.corrcoef(pred, gt)[0, 1])
    std_err = float(np.std(diff, ddof=1))
    mean_diff = float(np.mean(diff))
    lower = mean_diff - 1.96 * std_err
    upper = mean_diff + 1.96 * std_err
    return MetricReport(mae=mae, rmse=rmse, pearson_rho=rho, std_err=std_err,
                        bland_altman=(mean_diff, lower, upper))
