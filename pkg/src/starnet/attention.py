"""Attention mechanisms used inside the transformer blocks.

All mechanisms map (B, C, H, W) -> (B, C, H, W). Spatial mechanisms tokenize
the map into non-overlapping P x P patches by flattening (parameter free); a
token therefore has dimension D = P*P*C and is folded back the same way.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError


## ---------------------------------------------------------------- utilities


def channel_shuffle(x, groups):
    """Interleave channels across `groups` equal-sized groups."""
    b, c, h, w = x.shape
    if groups < 1 or c % groups != 0:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    return (
        x.view(b, groups, c // groups, h, w)
        .transpose(1, 2)
        .reshape(b, c, h, w)
    )


def scaled_dot_attention(q, k, v, return_weights=False):
    """softmax(q k^T / sqrt(d)) v over the last two dims.

    q: (..., N, d), k: (..., M, d), v: (..., M, dv).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    attn = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
    out = attn @ v
    if return_weights:
        return out, attn
    return out


def to_patch_tokens(x, patch):
    """(B, C, H, W) -> (B, (H/P)*(W/P), C*P*P) by flattening P x P patches."""
    b, c, h, w = x.shape
    if patch < 1 or h % patch != 0 or w % patch != 0:
        raise ShapeError(f"map {h}x{w} not tileable by patch size {patch}")
    gh, gw = h // patch, w // patch
    t = x.view(b, c, gh, patch, gw, patch)
    return t.permute(0, 2, 4, 1, 3, 5).reshape(b, gh * gw, c * patch * patch)


def from_patch_tokens(tokens, patch, channels, h, w):
    """Inverse of to_patch_tokens."""
    b, n, d = tokens.shape
    gh, gw = h // patch, w // patch
    if n != gh * gw or d != channels * patch * patch:
        raise ShapeError(f"token grid {tokens.shape} does not fold to {channels}x{h}x{w}")
    t = tokens.view(b, gh, gw, channels, patch, patch)
    return t.permute(0, 3, 1, 4, 2, 5).reshape(b, channels, h, w)


def _split_heads(t, heads):
    # (B, N, D) -> (B, heads, N, D/heads)
    b, n, d = t.shape
    return t.view(b, n, heads, d // heads).transpose(1, 2)


def _merge_heads(t):
    b, heads, n, dh = t.shape
    return t.transpose(1, 2).reshape(b, n, heads * dh)


## --------------------------------------------------------------- mechanisms


class WindowAttention(nn.Module):
    """Self-attention within non-overlapping square windows of the map.

    `window_size` is given in pixels; each window holds (WS/P)^2 patch tokens.
    The only normalization in the block family lives here (pre-attention LN).
    """

    def __init__(self, channels, num_heads, window_size, patch_size=1, qkv_bias=True):
        super().__init__()
        dim = channels * patch_size * patch_size
        if window_size % patch_size != 0:
            raise ConfigError(f"window {window_size} not a multiple of patch {patch_size}")
        if dim % num_heads != 0:
            raise ConfigError(f"token dim {dim} not divisible by {num_heads} heads")
        self.channels = channels
        self.num_heads = num_heads
        self.window_size = window_size
        self.patch_size = patch_size
        self.dim = dim
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, bias=qkv_bias)

    def forward(self, x, return_weights=False):
        b, c, h, w = x.shape
        ws, p = self.window_size, self.patch_size
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        if h % ws != 0 or w % ws != 0:
            raise ShapeError(f"map {h}x{w} not tileable by window size {ws}")
        wt = ws // p  # tokens per window side
        gh, gw = h // p, w // p
        nh, nw = gh // wt, gw // wt
        tokens = to_patch_tokens(x, p).view(b, gh, gw, self.dim)
        win = (
            tokens.view(b, nh, wt, nw, wt, self.dim)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(b * nh * nw, wt * wt, self.dim)
        )
        q, k, v = self.qkv(self.norm(win)).chunk(3, dim=-1)
        out, attn = scaled_dot_attention(
            _split_heads(q, self.num_heads),
            _split_heads(k, self.num_heads),
            _split_heads(v, self.num_heads),
            return_weights=True,
        )
        out = _merge_heads(out)
        out = (
            out.view(b, nh, nw, wt, wt, self.dim)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(b, gh * gw, self.dim)
        )
        out = from_patch_tokens(out, p, c, h, w)
        if return_weights:
            return out, attn
        return out


class MultiScaleAttention(nn.Module):
    """Patch-token queries attend to a spatially reduced key/value set.

    Keys and values are linear projections of the pixels of the `sr_ratio`-fold
    average-pooled map, so the token count on the KV side shrinks by SR^2.
    With sr_ratio=1 and patch_size=1 this is plain global attention.
    """

    def __init__(self, channels, num_heads, sr_ratio, patch_size=1, qkv_bias=True):
        super().__init__()
        dim = channels * patch_size * patch_size
        if sr_ratio < 1:
            raise ConfigError(f"sr_ratio must be >= 1, got {sr_ratio}")
        if dim % num_heads != 0:
            raise ConfigError(f"token dim {dim} not divisible by {num_heads} heads")
        self.channels = channels
        self.num_heads = num_heads
        self.sr_ratio = sr_ratio
        self.patch_size = patch_size
        self.dim = dim
        self.q = nn.Linear(dim, dim, bias=qkv_bias)
        self.kv = nn.Linear(channels, 2 * dim, bias=qkv_bias)

    def forward(self, x, return_weights=False):
        b, c, h, w = x.shape
        p, sr = self.patch_size, self.sr_ratio
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        if h % p != 0 or w % p != 0 or h % sr != 0 or w % sr != 0:
            raise ShapeError(f"map {h}x{w} not tileable by patch {p} and sr {sr}")
        q = self.q(to_patch_tokens(x, p))
        pooled = F.avg_pool2d(x, sr) if sr > 1 else x
        kv = self.kv(pooled.flatten(2).transpose(1, 2))
        k, v = kv.chunk(2, dim=-1)
        out, attn = scaled_dot_attention(
            _split_heads(q, self.num_heads),
            _split_heads(k, self.num_heads),
            _split_heads(v, self.num_heads),
            return_weights=True,
        )
        out = from_patch_tokens(_merge_heads(out), p, c, h, w)
        if return_weights:
            return out, attn
        return out


class CrissCrossAttention(nn.Module):
    """Each position attends to its own row and column (H + W - 1 targets).

    Queries/keys are projected to `qk_channels`, values to `v_channels`; the
    self position is kept once (in the row set) and masked from the column set.
    """

    def __init__(self, channels, qk_channels=None, v_channels=None, kernel_size=1):
        super().__init__()
        qk = qk_channels if qk_channels is not None else max(1, channels // 8)
        vc = v_channels if v_channels is not None else channels
        if qk < 1 or qk > channels:
            raise ConfigError(f"qk_channels {qk} outside [1, {channels}]")
        if vc != channels:
            raise ConfigError(f"v_channels {vc} must equal channels {channels}")
        pad = kernel_size // 2
        self.channels = channels
        self.qk_channels = qk
        self.query = nn.Conv2d(channels, qk, kernel_size, padding=pad)
        # a key bias shifts every logit of a query's row/column set by the
        # same constant, which the softmax ignores; it would be dead weight
        self.key = nn.Conv2d(channels, qk, kernel_size, padding=pad, bias=False)
        self.value = nn.Conv2d(channels, vc, kernel_size, padding=pad)

    def forward(self, x, return_weights=False):
        b, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        q = self.query(x)
        k = self.key(x)
        v = self.value(x)
        scale = 1.0 / math.sqrt(self.qk_channels)
        # energies toward the row of each position: (B, H, W, W)
        row_e = torch.einsum("bcij,bcik->bijk", q, k) * scale
        # energies toward the column, self masked to avoid counting it twice
        col_e = torch.einsum("bcij,bckj->bijk", q, k) * scale
        eye = torch.eye(h, dtype=torch.bool, device=x.device).view(1, h, 1, h)
        col_e = col_e.masked_fill(eye, float("-inf"))
        attn = torch.softmax(torch.cat([row_e, col_e], dim=-1), dim=-1)
        a_row, a_col = attn[..., :w], attn[..., w:]
        out = torch.einsum("bijk,bcik->bcij", a_row, v)
        out = out + torch.einsum("bijk,bckj->bcij", a_col, v)
        if return_weights:
            return out, attn
        return out


class ChannelAttention(nn.Module):
    """Transposed attention: channels attend to channels over flattened space."""

    def __init__(self, channels, num_heads, bias=True):
        super().__init__()
        if channels % num_heads != 0:
            raise ConfigError(f"channels {channels} not divisible by {num_heads} heads")
        self.channels = channels
        self.num_heads = num_heads
        self.qkv = nn.Conv2d(channels, 3 * channels, 1, bias=bias)
        self.proj = nn.Conv2d(channels, channels, 1, bias=bias)

    def forward(self, x, return_weights=False):
        b, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        q, k, v = self.qkv(x).chunk(3, dim=1)
        ch = c // self.num_heads
        q = q.view(b, self.num_heads, ch, h * w)
        k = k.view(b, self.num_heads, ch, h * w)
        v = v.view(b, self.num_heads, ch, h * w)
        out, attn = scaled_dot_attention(q, k, v, return_weights=True)
        out = self.proj(out.view(b, c, h, w))
        if return_weights:
            return out, attn
        return out


class CBAM(nn.Module):
    """Channel gate (shared MLP over avg/max pooled stats) then spatial gate."""

    def __init__(self, channels, reduction=16, kernel_size=7):
        super().__init__()
        if channels % reduction != 0:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
        )
        self.spatial = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        avg = F.adaptive_avg_pool2d(x, 1)
        mx = F.adaptive_max_pool2d(x, 1)
        x = x * torch.sigmoid(self.mlp(avg) + self.mlp(mx))
        stats = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.spatial(stats))
