"""Star-type skip connections.

Every pyramid level receives a resampled contribution from every other level:
finer levels arrive through cascades of stride-2 convolutions (one octave per
step) followed by a 1x1 channel alignment, coarser levels through cascades of
stride-2 transposed convolutions, and the level itself through a 1x1 conv.
A separate chain forwards each filtered level to the next coarser one.
"""

import torch
from torch import nn

from .errors import ConfigError, ShapeError


def _zero_biases(module):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)) and m.bias is not None:
            nn.init.zeros_(m.bias)


def _down_path(c_in, c_out, octaves):
    layers = [nn.Conv2d(c_in, c_in, 3, stride=2, padding=1) for _ in range(octaves)]
    layers.append(nn.Conv2d(c_in, c_out, 1))
    return nn.Sequential(*layers)


def _up_path(c_in, c_out, octaves):
    layers = [
        nn.ConvTranspose2d(c_in, c_in, 3, stride=2, padding=1, output_padding=1)
        for _ in range(octaves)
    ]
    layers.append(nn.Conv2d(c_in, c_out, 1))
    return nn.Sequential(*layers)


class StarAggregator(nn.Module):
    """Aggregate a feature pyramid so each output level sums contributions
    from all input levels (downsampled, upsampled, and same-level)."""

    def __init__(self, channels):
        super().__init__()
        if len(channels) < 1:
            raise ConfigError("need at least one pyramid level")
        self.channels = tuple(channels)
        n = len(self.channels)
        self.connect = nn.ModuleList(nn.Conv2d(c, c, 1) for c in self.channels)
        self.down = nn.ModuleDict()
        self.up = nn.ModuleDict()
        for i in range(n):
            for j in range(n):
                if j < i:
                    self.down[f"{j}to{i}"] = _down_path(
                        self.channels[j], self.channels[i], i - j
                    )
                elif j > i:
                    self.up[f"{j}to{i}"] = _up_path(
                        self.channels[j], self.channels[i], j - i
                    )
        _zero_biases(self)  # zero->zero property holds from construction

    def _check(self, features):
        if len(features) != len(self.channels):
            raise ShapeError(
                f"expected {len(self.channels)} levels, got {len(features)}"
            )
        for i, (f, c) in enumerate(zip(features, self.channels)):
            if f.shape[1] != c:
                raise ShapeError(f"level {i}: expected {c} channels, got {f.shape[1]}")

    def downsampled(self, features, i):
        """Sum of contributions from all finer levels j < i."""
        self._check(features)
        out = None
        for j in range(i):
            term = self.down[f"{j}to{i}"](features[j])
            out = term if out is None else out + term
        return torch.zeros_like(features[i]) if out is None else out

    def upsampled(self, features, i):
        """Sum of contributions from all coarser levels j > i."""
        self._check(features)
        out = None
        for j in range(i + 1, len(features)):
            term = self.up[f"{j}to{i}"](features[j])
            out = term if out is None else out + term
        return torch.zeros_like(features[i]) if out is None else out

    def same_level(self, features, i):
        self._check(features)
        return self.connect[i](features[i])

    def level(self, features, i):
        return (
            self.same_level(features, i)
            + self.downsampled(features, i)
            + self.upsampled(features, i)
        )

    def forward(self, features):
        self._check(features)
        return [self.level(features, i) for i in range(len(features))]


class SameLevelAggregator(nn.Module):
    """Plain skip connections: each level passes through its own 1x1 conv,
    with no cross-level mixing."""

    def __init__(self, channels):
        super().__init__()
        self.channels = tuple(channels)
        self.connect = nn.ModuleList(nn.Conv2d(c, c, 1) for c in self.channels)
        _zero_biases(self)

    def forward(self, features):
        if len(features) != len(self.channels):
            raise ShapeError(
                f"expected {len(self.channels)} levels, got {len(features)}"
            )
        return [conv(f) for conv, f in zip(self.connect, features)]


class DfmChain(nn.Module):
    """Forward each filtered level to the next coarser level through one
    stride-2 channel-aligning convolution (kernel size per step)."""

    def __init__(self, channels, kernels):
        super().__init__()
        if len(kernels) != len(channels) - 1:
            raise ConfigError(
                f"need {len(channels) - 1} chain kernels, got {len(kernels)}"
            )
        self.convs = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], k, stride=2, padding=k // 2)
            for i, k in enumerate(kernels)
        )
        _zero_biases(self)

    def forward(self, prev_out, i):
        """Contribution of the level (i-1) output to level i."""
        if i < 1 or i > len(self.convs):
            raise ShapeError(f"chain step {i} out of range 1..{len(self.convs)}")
        return self.convs[i - 1](prev_out)
