"""Degenerate filter module.

Applied to each aggregated skip level: patch-token multi-head self-attention
over the whole map, followed by a channel gating stage whose gate is the
global-max-pooled activation of one depthwise-separable branch applied to the
other. No residual wraps the module.
"""

import torch
from torch import nn

from .attention import (
    _merge_heads,
    _split_heads,
    from_patch_tokens,
    scaled_dot_attention,
    to_patch_tokens,
)
from .errors import ConfigError, ShapeError


class SpatialSelfAttention(nn.Module):
    """Global self-attention over flattened P x P patch tokens. Queries, keys
    and values come from bias-free linear maps of the raw tokens; the attended
    tokens fold straight back into the map (no output projection)."""

    def __init__(self, channels, num_heads, patch_size=1):
        super().__init__()
        dim = channels * patch_size * patch_size
        if dim % num_heads != 0:
            raise ConfigError(f"token dim {dim} not divisible by {num_heads} heads")
        self.channels = channels
        self.num_heads = num_heads
        self.patch_size = patch_size
        self.dim = dim
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)

    def forward(self, x, return_weights=False):
        b, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        tokens = to_patch_tokens(x, self.patch_size)
        out, attn = scaled_dot_attention(
            _split_heads(self.w_q(tokens), self.num_heads),
            _split_heads(self.w_k(tokens), self.num_heads),
            _split_heads(self.w_v(tokens), self.num_heads),
            return_weights=True,
        )
        out = from_patch_tokens(_merge_heads(out), self.patch_size, c, h, w)
        if return_weights:
            return out, attn
        return out


class ChannelGating(nn.Module):
    """Two depthwise+pointwise branches; the gate is the spatial global max of
    GELU(branch one), broadcast over branch two, then projected."""

    def __init__(self, channels, kernel_size=3):
        super().__init__()
        pad = kernel_size // 2
        self.dw1 = nn.Conv2d(channels, channels, kernel_size, padding=pad, groups=channels)
        self.pw1 = nn.Conv2d(channels, channels, 1)
        self.dw2 = nn.Conv2d(channels, channels, kernel_size, padding=pad, groups=channels)
        self.pw2 = nn.Conv2d(channels, channels, 1)
        self.out = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        o1 = self.pw1(self.dw1(x))
        o2 = self.pw2(self.dw2(x))
        gate = torch.nn.functional.gelu(o1).amax(dim=(2, 3), keepdim=True)
        return self.out(gate * o2)


class DegenerateFilter(nn.Module):
    """Spatial self-attention then channel gating, no residual."""

    def __init__(self, channels, num_heads, patch_size=1, gating_kernel=3):
        super().__init__()
        self.attn = SpatialSelfAttention(channels, num_heads, patch_size)
        self.gating = ChannelGating(channels, gating_kernel)

    def forward(self, x):
        return self.gating(self.attn(x))
