"""Contrast maps, frequency-ratio prompts, and patch masking.

A contrast map (C-STMap) splices the late half of a positive STMap onto the
early half of a negative one, so the horizontal color variation changes
frequency by a known rational ratio at the seam. The prompt states that
ratio in words; the tokenizer covers the closed prompt language.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .stmap import StMap

logger = logging.getLogger(__name__)

PROMPT_LENGTH = 32

RATIO_LITERALS = {
    0.25: "1/4",
    0.5: "1/2",
    0.75: "3/4",
    1.25: "5/4",
    1.5: "3/2",
    1.75: "7/4",
    2.0: "2",
}

# {side}: the side being described; {other}: the reference side.
TEMPLATES = {
    "default": ("the frequency of the horizontal color variation on the {side} side "
                "is {ratio} times of that on the {other} side of the image"),
    "t1": ("the frequency of the horizontal color variation on the {side} side "
           "is {ratio} as high as on the {other} side of the image"),
    "t2": ("the frequency of horizontal color variation on the {side} side "
           "is {ratio} as great as on the {other} side of the image"),
    "t3": ("the horizontal color variation on the {side} side is {ratio} times "
           "as fast as on the {other} side of the image"),
}

PAD, CLS, UNK = "[PAD]", "[CLS]", "[UNK]"

_TEMPLATE_WORDS = sorted({w for t in TEMPLATES.values()
                          for w in t.format(side="left", other="right", ratio="").split()}
                         | {"left", "right"})
VOCAB = [PAD, CLS, UNK] + _TEMPLATE_WORDS + list(RATIO_LITERALS.values())
TOKEN_IDS = {w: i for i, w in enumerate(VOCAB)}
PAD_ID, CLS_ID, UNK_ID = TOKEN_IDS[PAD], TOKEN_IDS[CLS], TOKEN_IDS[UNK]


@dataclass
class CStMap:
    """Spliced map whose halves differ in pulse frequency by `ratio`."""

    pixels: np.ndarray
    left_mult: float
    right_mult: float
    ratio: float  # frequency multiplier of the negative half (bin value)

    def __post_init__(self):
        f = self.pixels.shape[0]
        if self.pixels.shape != (f, f, 3):
            raise ValueError(f"contrast map must be F x F x 3, got {self.pixels.shape}")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def negative_side(self) -> str:
        return "right" if self.right_mult != 1.0 else "left"


@dataclass
class PromptText:
    text: str
    ratio_literal: str
    tokens: np.ndarray  # int ids, [CLS] first, padded to PROMPT_LENGTH


@dataclass
class MaskedCStMap:
    """Partition of a contrast map's patch grid into visible and masked."""

    visible_patches: np.ndarray    # (n_visible, p, p, 3)
    visible_positions: np.ndarray  # (n_visible,) row-major patch indices
    masked_positions: np.ndarray   # (n_masked,)
    patch: int
    b: float
    map_size: int

    @property
    def n_patches(self) -> int:
        return (self.map_size // self.patch) ** 2


def make_cstmaps(positives: list[StMap], negatives: list[StMap],
                 swap_sides: bool = False) -> list[CStMap]:
    """All positive x negative splices (n_pos * k_neg maps).

    Concatenate horizontally and centrally crop: the left F/2 columns come
    from the positive, the right F/2 from the negative. With swap_sides the
    negative goes on the left instead.
    """
    maps = []
    for pos in positives:
        for neg in negatives:
            f = pos.size
            if neg.size != f:
                raise ValueError(f"map size mismatch: {pos.size} vs {neg.size}")
            if pos.f_mult != 1.0:
                raise ValueError("left input must be a positive map (f_mult == 1)")
            left = pos.pixels[:, f // 2:, :]
            right = neg.pixels[:, :f // 2, :]
            left_mult, right_mult = 1.0, neg.f_mult
            if swap_sides:
                left, right = right, left
                left_mult, right_mult = right_mult, left_mult
            pixels = np.concatenate([left, right], axis=1)
            maps.append(CStMap(pixels=pixels, left_mult=left_mult,
                               right_mult=right_mult, ratio=neg.f_mult))
    return maps


def ratio_literal(ratio: float) -> str:
    if ratio not in RATIO_LITERALS:
        raise ValueError(f"ratio {ratio} has no exact literal; allowed: {sorted(RATIO_LITERALS)}")
    return RATIO_LITERALS[ratio]


def make_prompt(ratio: float, template: str = "default",
                describe_side: str = "right") -> PromptText:
    """Sentence stating the frequency ratio of one side relative to the other.

    By default the described side is the right (negative) half, so the ratio
    literal is exactly the negative's frequency multiplier.
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}")
    if describe_side not in ("left", "right"):
        raise ValueError("describe_side must be 'left' or 'right'")
    literal = ratio_literal(ratio)
    other = "left" if describe_side == "right" else "right"
    text = TEMPLATES[template].format(side=describe_side, other=other, ratio=literal)
    return PromptText(text=text, ratio_literal=literal, tokens=tokenize(text))


def prompt_for_map(cmap: CStMap, template: str = "default") -> PromptText:
    """Prompt describing the negative side of a contrast map."""
    return make_prompt(cmap.ratio, template=template, describe_side=cmap.negative_side)


def tokenize(text: str) -> np.ndarray:
    """Lowercase word-level tokens, [CLS] first, padded/truncated to 32 ids.

    Fraction literals like "1/2" stay single tokens. Unknown words map to
    [UNK] and are logged.
    """
    words = text.lower().split()
    unknown = sum(1 for w in words if w not in TOKEN_IDS)
    if unknown:
        logger.warning("tokenize: %d unknown word(s) in %r", unknown, text)
    ids = [CLS_ID] + [TOKEN_IDS.get(w, UNK_ID) for w in words]
    ids = ids[:PROMPT_LENGTH]
    ids += [PAD_ID] * (PROMPT_LENGTH - len(ids))
    return np.asarray(ids, dtype=np.int64)


def detokenize(tokens: np.ndarray) -> str:
    words = [VOCAB[t] for t in tokens]
    return " ".join(w for w in words if w not in (PAD, CLS))


def mask_cstmap(cmap: CStMap, b: float, patch: int,
                rng: np.random.Generator) -> MaskedCStMap:
    """Mask a uniform random subset of exactly round(b * n_patches) patches."""
    f = cmap.size
    if patch <= 0 or f % patch != 0:
        raise ValueError(f"patch size {patch} must divide map size {f}")
    if not 0.0 < b < 1.0:
        raise ValueError(f"masking ratio must be in (0, 1), got {b}")
    per_side = f // patch
    n_patches = per_side * per_side
    n_masked = int(round(b * n_patches))
    order = rng.permutation(n_patches)
    masked = np.sort(order[:n_masked])
    visible = np.sort(order[n_masked:])
    patches = cmap.pixels.reshape(per_side, patch, per_side, patch, 3)
    patches = patches.transpose(0, 2, 1, 3, 4).reshape(n_patches, patch, patch, 3)
    return MaskedCStMap(visible_patches=patches[visible],
                        visible_positions=visible,
                        masked_positions=masked,
                        patch=patch, b=b, map_size=f)
