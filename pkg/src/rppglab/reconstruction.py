"""Text-guided reconstruction of masked contrast maps.

Three interaction blocks, each: self-attention over the token sequence,
cross-attention onto the prompt's [CLS] embedding (a single key/value, so the
softmax is degenerate and the update is a learned text-conditioned additive
term), then a feed-forward layer. A per-token linear projection maps back to
patch pixels.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .encoders import Attention, Mlp, ModelDims, init_weights, unpatchify

INIT_STD = 0.02


class InteractionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm_sa = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm_ca = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = Mlp(dim, mlp_ratio)

    def forward(self, z: torch.Tensor, text_cls: torch.Tensor) -> torch.Tensor:
        z = z + self.self_attn(self.norm_sa(z))
        z = z + self.cross_attn(self.norm_ca(z), kv=text_cls[:, None, :])
        z = z + self.ff(self.norm_ff(z))
        return z


class TextGuidedDecoder(nn.Module):
    """Recovers a full map from visible patch embeddings and the prompt."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        d = dims.embed_dim
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.pos_embed = nn.Parameter(torch.zeros(dims.n_patches, d))
        self.blocks = nn.ModuleList([
            InteractionBlock(d, dims.heads, dims.mlp_ratio)
            for _ in range(dims.decoder_blocks)])
        self.to_pixels = nn.Linear(d, dims.patch * dims.patch * 3)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.mask_token, std=INIT_STD)
        nn.init.trunc_normal_(self.pos_embed, std=INIT_STD)

    def forward(self, visible_emb: torch.Tensor, visible_pos: torch.Tensor,
                masked_pos: torch.Tensor, text_cls: torch.Tensor) -> torch.Tensor:
        """Reassemble the token sequence and reconstruct all patches.

        visible_emb: (B, V, d) encoder outputs; visible_pos/masked_pos:
        (B, V)/(B, M) row-major patch indices forming a disjoint partition;
        text_cls: (B, d). Returns maps (B, F, F, 3).
        """
        b, v, d = visible_emb.shape
        m = masked_pos.shape[1]
        n = self.dims.n_patches
        if v + m != n:
            raise ValueError(f"positions must partition {n} patches, got {v}+{m}")
        overlap = torch.zeros(b, n, dtype=torch.int64, device=visible_emb.device)
        overlap.scatter_add_(1, visible_pos, torch.ones_like(visible_pos))
        overlap.scatter_add_(1, masked_pos, torch.ones_like(masked_pos))
        if bool((overlap != 1).any()):
            raise ValueError("visible and masked positions overlap or miss patches")
        mask_tok = self.mask_token.to(visible_emb.dtype) + \
            self.pos_embed.to(visible_emb.dtype)[masked_pos]
        z = torch.zeros(b, n, d, dtype=visible_emb.dtype, device=visible_emb.device)
        z = z.scatter(1, visible_pos[..., None].expand(-1, -1, d), visible_emb)
        z = z.scatter(1, masked_pos[..., None].expand(-1, -1, d), mask_tok)
        for block in self.blocks:
            z = block(z, text_cls)
        pixels = self.to_pixels(z)
        return unpatchify(pixels, self.dims.patch, self.dims.map_size)
