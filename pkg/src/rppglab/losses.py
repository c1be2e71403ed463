"""Training losses: reconstruction, vision-text contrast, frequency contrast,
frequency ranking, and the optional supervised Pearson loss.

All losses are differentiable torch functions. The frequency-domain distance
e(.,.) is the mean squared error between band-limited, sum-normalized power
spectra.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch

logger = logging.getLogger(__name__)

PULSE_BAND = (0.75, 4.0)


@dataclass
class LossConfig:
    tau1: float = 0.07            # vision-text contrast temperature
    tau2: float = 0.08            # frequency contrast temperature
    band: tuple = PULSE_BAND
    n_fft: int = 512
    fs: float = 30.0
    weights: dict = field(default_factory=lambda: {
        "recon": 1.0, "vtc": 1.0, "fc": 1.0, "fr": 1.0})
    vtc_include_positive: bool = False  # include the matched pair in the denominator
    psd_normalized: bool = True
    recon_masked_only: bool = False

    def validate(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("temperatures must be positive")
        if not 0 < self.band[0] < self.band[1] < self.fs / 2:
            raise ValueError(f"band {self.band} invalid for fs={self.fs}")


def power_spectrum(y: torch.Tensor, n_fft: int) -> torch.Tensor:
    """|rfft|^2 of the zero-padded signal along the last axis."""
    return torch.fft.rfft(y, n=n_fft).abs() ** 2


def psd(y: torch.Tensor, fs: float, band: tuple = PULSE_BAND,
        n_fft: int = 512, normalized: bool = True) -> torch.Tensor:
    """Band-limited power spectrum, normalized to sum 1 along the last axis.

    An (effectively) all-zero signal yields a uniform in-band spectrum with a
    logged warning rather than a 0/0.
    """
    freqs = torch.fft.rfftfreq(n_fft, d=1.0 / fs)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    if not bool(mask.any()):
        raise ValueError(f"band {band} contains no FFT bins")
    p = power_spectrum(y, n_fft)[..., mask]
    if not normalized:
        return p
    total = p.sum(dim=-1, keepdim=True)
    degenerate = total < 1e-30
    if bool(degenerate.any()):
        logger.warning("psd: zero-power signal, returning uniform spectrum")
        uniform = torch.full_like(p, 1.0 / p.shape[-1])
        return torch.where(degenerate, uniform, p / total.clamp_min(1e-30))
    return p / total


def psd_distance(y1: torch.Tensor, y2: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Mean squared error between the two signals' band-limited spectra."""
    p1 = psd(y1, cfg.fs, cfg.band, cfg.n_fft, cfg.psd_normalized)
    p2 = psd(y2, cfg.fs, cfg.band, cfg.n_fft, cfg.psd_normalized)
    return ((p1 - p2) ** 2).mean(dim=-1)


def reconstruction_loss(originals: torch.Tensor, recons: torch.Tensor,
                        mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over maps of the per-map mean squared error.

    originals/recons: (n, F, F, 3). With `mask` (n, F, F) only masked pixels
    contribute.
    """
    if originals.shape != recons.shape:
        raise ValueError(f"shape mismatch {originals.shape} vs {recons.shape}")
    sq = (originals - recons) ** 2
    if mask is None:
        return sq.mean()
    m = mask[..., None].to(sq.dtype)  # (n, F, F, 1), broadcast over channels
    n_terms = m.sum() * sq.shape[-1]
    return (sq * m).sum() / n_terms.clamp_min(1)


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if bool((na < 1e-12).any()) or bool((nb < 1e-12).any()):
        raise ValueError("zero-norm embedding: cosine similarity undefined")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def vision_text_contrastive_loss(v_cls: torch.Tensor, d_cls: torch.Tensor,
                                 tau: float = 0.07,
                                 include_positive: bool = False) -> torch.Tensor:
    """Symmetric InfoNCE-style alignment of n matched vision/text embeddings.

    The denominator sums over the non-matching pairs only, unless
    include_positive is set.
    """
    n = v_cls.shape[0]
    if d_cls.shape[0] != n:
        raise ValueError("need matched vision/text embedding counts")
    sims = _cosine_matrix(v_cls, d_cls) / tau
    eye = torch.eye(n, dtype=torch.bool, device=sims.device)
    pos = sims.diagonal()
    neg_inf = torch.finfo(sims.dtype).min
    v2t = sims if include_positive else sims.masked_fill(eye, neg_inf)
    t2v = sims.T if include_positive else sims.T.masked_fill(eye, neg_inf)
    loss_v2t = -(pos - torch.logsumexp(v2t, dim=1))
    loss_t2v = -(pos - torch.logsumexp(t2v, dim=1))
    return (loss_v2t + loss_t2v).mean()


def frequency_contrastive_loss(pos: torch.Tensor, neg: torch.Tensor,
                               cfg: LossConfig) -> torch.Tensor:
    """Pull the two positive signals' spectra together, push negatives away.

    pos: (2, F); neg: (k, F).
    """
    if pos.shape[0] != 2:
        raise ValueError("exactly 2 positive signals required")
    if neg.shape[0] < 1:
        raise ValueError("at least 1 negative signal required")
    e_pos = psd_distance(pos[0], pos[1], cfg)
    e_neg1 = psd_distance(pos[0].unsqueeze(0).expand_as(neg), neg, cfg)
    e_neg2 = psd_distance(pos[1].unsqueeze(0).expand_as(neg), neg, cfg)
    num = torch.exp(e_pos / cfg.tau2)
    denom = (torch.exp(e_neg1 / cfg.tau2) + torch.exp(e_neg2 / cfg.tau2)).sum()
    return torch.log(num / denom + 1.0)


def rank_labels(ratios) -> tuple[int, int, int, int, int]:
    """Frequency ranks for (pos1, pos2, neg1, neg2, neg3).

    Ranks are 1-based ascending positions of {r1, r2, r3, 1.0}; both positives
    share the rank of 1.0.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError("exactly 3 ratios required")
    values = list(ratios) + [1.0]
    if len(set(values)) != 4:
        raise ValueError(f"tied ratios {ratios}: ranks undefined")
    order = sorted(values)
    rank = {v: order.index(v) + 1 for v in values}
    return (rank[1.0], rank[1.0], rank[ratios[0]], rank[ratios[1]], rank[ratios[2]])


def rank_pairs(labels) -> list[tuple[int, int]]:
    """Ordered index pairs (q, c) with label(c) < label(q)."""
    n = len(labels)
    return [(q, c) for q in range(n) for c in range(n) if labels[c] < labels[q]]


def frequency_ranking_loss(scores: torch.Tensor, labels) -> torch.Tensor:
    """Mean logistic pairwise ranking loss over the 9 ordered pairs.

    scores: (5,) predicted rank scores; labels: 5 ratings in 1..4 with the
    two positives tied. phi(u) = log(1 + exp(-u)), computed stably.
    """
    if scores.shape[-1] != 5 or len(labels) != 5:
        raise ValueError("ranking loss is defined for exactly 5 signals")
    pairs = rank_pairs(labels)
    if len(pairs) != 9:
        raise ValueError(f"invalid label vector {labels}: {len(pairs)} pairs, expected 9")
    diffs = torch.stack([scores[q] - scores[c] for q, c in pairs])
    return torch.nn.functional.softplus(-diffs).sum() / 9.0


def pearson_loss(y: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """1 - Pearson correlation between a predicted and a reference signal."""
    if y.shape != g.shape:
        raise ValueError("signals must have equal length")
    yc = y - y.mean()
    gc = g - g.mean()
    denom = yc.norm() * gc.norm()
    if float(denom) < 1e-12:
        raise ValueError("zero-variance signal: Pearson correlation undefined")
    return 1.0 - (yc * gc).sum() / denom


def total_loss(components: dict[str, torch.Tensor],
               weights: dict[str, float]) -> torch.Tensor:
    """Weighted sum of loss components; aborts naming any non-finite one."""
    total = None
    for name, value in components.items():
        if not bool(torch.isfinite(value)):
            raise FloatingPointError(f"non-finite loss component {name!r}: {value}")
        term = weights.get(name, 1.0) * value
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no loss components given")
    return total
