"""Multi-stage interactive transformer block.

The block runs two parallel paths over the same input: a four-branch attention
mixer (window / multi-scale / criss-cross / channel attention over shuffled
channel groups, re-fused by channel attention and CBAM) and a bank of parallel
plain convolution stacks. Their sum passes through a convolutional gate, and
the block is residual around the whole thing.
"""

import torch
from torch import nn

from .attention import (
    CBAM,
    ChannelAttention,
    CrissCrossAttention,
    MultiScaleAttention,
    WindowAttention,
    channel_shuffle,
)
from .errors import ConfigError


class MultiStageAttention(nn.Module):
    """Shuffle channels, split into four groups, run one mechanism per group,
    concatenate, then fuse with channel attention followed by CBAM."""

    def __init__(
        self,
        channels,
        num_heads,
        window_size,
        sr_ratio,
        patch_size=1,
        cca_qk_channels=None,
        cbam_reduction=16,
        cbam_kernel=7,
        shuffle_groups=4,
    ):
        super().__init__()
        if channels % 4 != 0:
            raise ConfigError(f"channels {channels} not divisible into 4 branch groups")
        branch = channels // 4
        self.shuffle_groups = shuffle_groups
        self.window_attn = WindowAttention(branch, num_heads, window_size, patch_size)
        self.multi_scale_attn = MultiScaleAttention(branch, num_heads, sr_ratio, patch_size)
        self.criss_cross_attn = CrissCrossAttention(branch, cca_qk_channels)
        self.channel_attn = ChannelAttention(branch, num_heads)
        self.fusion_attn = ChannelAttention(channels, num_heads)
        self.cbam = CBAM(channels, cbam_reduction, cbam_kernel)

    def forward(self, x):
        g1, g2, g3, g4 = channel_shuffle(x, self.shuffle_groups).chunk(4, dim=1)
        mixed = torch.cat(
            [
                self.window_attn(g1),
                self.multi_scale_attn(g2),
                self.criss_cross_attn(g3),
                self.channel_attn(g4),
            ],
            dim=1,
        )
        return self.cbam(self.fusion_attn(mixed))


class MultiScaleDeepConv(nn.Module):
    """Parallel stacks of plain same-channel convolutions (one kernel size per
    stack, no activations), summed."""

    def __init__(self, channels, kernels=(3, 5, 7), depth=3):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        for k in kernels:
            if k % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd, got {k}")
        self.stacks = nn.ModuleList(
            nn.Sequential(
                *(nn.Conv2d(channels, channels, k, padding=k // 2) for _ in range(depth))
            )
            for k in kernels
        )

    def forward(self, x):
        out = self.stacks[0](x)
        for stack in self.stacks[1:]:
            out = out + stack(x)
        return out


class ConvGatingNetwork(nn.Module):
    """Project to 2C channels, split, and gate: sigmoid(o1) * elu(o2)."""

    def __init__(self, channels, kernel_size=3):
        super().__init__()
        self.proj = nn.Conv2d(channels, 2 * channels, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        o1, o2 = self.proj(x).chunk(2, dim=1)
        return torch.sigmoid(o1) * nn.functional.elu(o2)


class MITBlock(nn.Module):
    """attention path + conv path -> gate -> residual.

    Either path may be disabled; with the gate disabled the summed paths pass
    through unchanged. `attn` is any (B,C,H,W)->(B,C,H,W) module so ablations
    can swap the four-branch mixer for a plain mechanism.
    """

    def __init__(self, channels, attn, msdc=None, gate=None, residual=True):
        super().__init__()
        self.attn = attn
        self.msdc = msdc
        self.gate = gate
        self.residual = residual

    def forward(self, x):
        out = None
        if self.attn is not None:
            out = self.attn(x)
        if self.msdc is not None:
            h = self.msdc(x)
            out = h if out is None else out + h
        if out is None:
            out = torch.zeros_like(x)
        if self.gate is not None:
            out = self.gate(out)
        return x + out if self.residual else out


class PlainTransformerBlock(nn.Module):
    """Baseline block: full-extent window attention + pointwise conv FFN,
    each with its own residual."""

    def __init__(self, channels, num_heads, side, patch_size=1):
        super().__init__()
        self.attn = WindowAttention(channels, num_heads, side, patch_size)
        self.ffn = nn.Sequential(
            nn.Conv2d(channels, 2 * channels, 1),
            nn.GELU(),
            nn.Conv2d(2 * channels, channels, 1),
        )

    def forward(self, x):
        x = x + self.attn(x)
        return x + self.ffn(x)
