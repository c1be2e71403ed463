"""Toy transformer encoders and prediction heads.

The vision encoder is a small pre-LN ViT over p x p patches with a [CLS]
token; it also supports encoding only a visible subset of patches (keeping
their original positional embeddings). The text encoder is a small BERT-style
stack over the closed prompt vocabulary with padding masked out of attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .pairs import PAD_ID, PROMPT_LENGTH, VOCAB

INIT_STD = 0.02


@dataclass
class ModelDims:
    map_size: int = 64
    patch: int = 8
    embed_dim: int = 64
    sim_dim: int = 64
    vision_depth: int = 4
    text_depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    decoder_blocks: int = 3

    @property
    def n_patches(self) -> int:
        return (self.map_size // self.patch) ** 2

    def validate(self):
        if self.map_size % self.patch != 0:
            raise ValueError("patch must divide map_size")
        if self.embed_dim % self.heads != 0:
            raise ValueError("heads must divide embed_dim")


def init_weights(module: nn.Module):
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.trunc_normal_(module.weight, std=INIT_STD)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, kv=None, key_mask=None):
        """Self-attention over x, or cross-attention with keys/values from kv.

        key_mask: (B, S) bool, True where the key may be attended to.
        """
        b, n, d = x.shape
        if kv is None:
            qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim)
            q, k, v = qkv.unbind(dim=2)
        else:
            w_q, w_k, w_v = self.qkv.weight.chunk(3, dim=0)
            b_q, b_k, b_v = self.qkv.bias.chunk(3, dim=0)
            s = kv.shape[1]
            q = F.linear(x, w_q, b_q).reshape(b, n, self.heads, self.head_dim)
            k = F.linear(kv, w_k, b_k).reshape(b, s, self.heads, self.head_dim)
            v = F.linear(kv, w_v, b_v).reshape(b, s, self.heads, self.head_dim)
        q, k, v = (t.transpose(1, 2) for t in (q, k, v))  # (B, H, S, hd)
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if key_mask is not None:
            bias = torch.where(key_mask[:, None, None, :], 0.0,
                               torch.finfo(attn.dtype).min)
            attn = attn + bias
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, -1, self.heads * self.head_dim)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-LN transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, key_mask=None):
        x = x + self.attn(self.norm1(x), key_mask=key_mask)
        x = x + self.mlp(self.norm2(x))
        return x


def patchify(maps: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, F, F, 3) -> (B, N, patch*patch*3), row-major patch order."""
    b, f, f2, c = maps.shape
    if f != f2 or f % patch != 0:
        raise ValueError(f"maps must be square with side divisible by {patch}")
    n = f // patch
    x = maps.reshape(b, n, patch, n, patch, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, n * n, patch * patch * c)


def unpatchify(tokens: torch.Tensor, patch: int, map_size: int) -> torch.Tensor:
    """(B, N, patch*patch*3) -> (B, F, F, 3)."""
    b = tokens.shape[0]
    n = map_size // patch
    x = tokens.reshape(b, n, n, patch, patch, 3)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, map_size, map_size, 3)


class VisionEncoder(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        dims.validate()
        self.dims = dims
        d = dims.embed_dim
        self.patch_embed = nn.Linear(dims.patch * dims.patch * 3, d)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.pos_embed = nn.Parameter(torch.zeros(1, dims.n_patches + 1, d))
        self.blocks = nn.ModuleList([Block(d, dims.heads, dims.mlp_ratio)
                                     for _ in range(dims.vision_depth)])
        self.norm = nn.LayerNorm(d)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.cls_token, std=INIT_STD)
        nn.init.trunc_normal_(self.pos_embed, std=INIT_STD)

    def encode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Run the block stack + final norm on a prepared token sequence."""
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)

    def forward(self, maps: torch.Tensor):
        """(B, F, F, 3) -> cls (B, d), patches (B, N, d)."""
        if not bool(torch.isfinite(maps).all()):
            raise ValueError("non-finite values in encoder input")
        x = self.patch_embed(patchify(maps, self.dims.patch))
        x = x + self.pos_embed[:, 1:, :]
        cls = (self.cls_token + self.pos_embed[:, :1, :]).expand(x.shape[0], -1, -1)
        out = self.encode_tokens(torch.cat([cls, x], dim=1))
        return out[:, 0], out[:, 1:]

    def forward_masked(self, visible_patches: torch.Tensor,
                       visible_positions: torch.Tensor):
        """Encode only visible patches, keeping their positional embeddings.

        visible_patches: (B, V, p*p*3); visible_positions: (B, V) row-major
        indices. Returns cls (B, d) and visible embeddings (B, V, d). The
        [CLS] token rides along so that zero masking reproduces forward().
        """
        if visible_patches.shape[1] == 0:
            raise ValueError("visible patch set must be non-empty")
        x = self.patch_embed(visible_patches)
        pos = self.pos_embed[0, 1:, :][visible_positions]  # (B, V, d)
        x = x + pos
        cls = (self.cls_token + self.pos_embed[:, :1, :]).expand(x.shape[0], -1, -1)
        out = self.encode_tokens(torch.cat([cls, x], dim=1))
        return out[:, 0], out[:, 1:]


class TextEncoder(nn.Module):
    def __init__(self, dims: ModelDims, vocab_size: int = len(VOCAB)):
        super().__init__()
        d = dims.embed_dim
        self.token_embed = nn.Embedding(vocab_size, d)
        self.pos_embed = nn.Parameter(torch.zeros(1, PROMPT_LENGTH, d))
        self.blocks = nn.ModuleList([Block(d, dims.heads, dims.mlp_ratio)
                                     for _ in range(dims.text_depth)])
        self.norm = nn.LayerNorm(d)
        self.vocab_size = vocab_size
        self.apply(init_weights)
        nn.init.trunc_normal_(self.pos_embed, std=INIT_STD)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, 32) int ids -> cls embedding (B, d). Padding is masked out."""
        if bool((tokens < 0).any()) or bool((tokens >= self.vocab_size).any()):
            raise ValueError("token id out of vocabulary range")
        x = self.token_embed(tokens) + self.pos_embed
        key_mask = tokens != PAD_ID
        for block in self.blocks:
            x = block(x, key_mask=key_mask)
        return self.norm(x)[:, 0]


class Heads(nn.Module):
    """Projections into the shared similarity space, the pulse-signal head,
    and the rank scorer over the five concatenated signals."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.vision_proj = nn.Linear(dims.embed_dim, dims.sim_dim)
        self.text_proj = nn.Linear(dims.embed_dim, dims.sim_dim)
        self.rppg = nn.Linear(dims.embed_dim, dims.map_size)
        self.rank = nn.Linear(5 * dims.map_size, 5)
        self.apply(init_weights)

    def rppg_signal(self, cls: torch.Tensor) -> torch.Tensor:
        """(..., d) -> pulse signal (..., F)."""
        if not bool(torch.isfinite(cls).all()):
            raise ValueError("non-finite embedding for signal head")
        return self.rppg(cls)

    def rank_scores(self, signals: torch.Tensor) -> torch.Tensor:
        """5 signals (pos1, pos2, neg1, neg2, neg3), shape (..., 5, F) -> (..., 5).

        Order-sensitive by construction: the scorer is one linear map over the
        concatenation.
        """
        if signals.shape[-2] != 5:
            raise ValueError(f"rank scorer needs exactly 5 signals, got {signals.shape[-2]}")
        flat = signals.reshape(*signals.shape[:-2], -1)
        return self.rank(flat)
