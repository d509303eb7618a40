"""Training objectives.

The total objective is smooth L1 plus a weighted perceptual term computed as
the sum of per-tap mean squared errors between deep features of the
prediction and the target, extracted by a frozen 16-layer-style conv stack
(channels 64,64 | 128,128 | 256,256,256 with max-pools between stages, taps
after the 2nd, 4th and 7th ReLUs). Pretrained weights can be supplied as an
npz state dict; without one the stack falls back to a pinned-seed random
initialization, which still yields a valid trainable objective (zero iff the
inputs match) but not a perceptually calibrated one.
"""

import dataclasses
import logging

import numpy as np
import torch
from torch import nn

from .errors import ParamError, ShapeError

log = logging.getLogger(__name__)


def smooth_l1(pred, target, beta=1.0):
    """Mean over elements of: 0.5*t^2 inside |t| < beta, |t| - 0.5*beta outside."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if beta <= 0:
        raise ParamError(f"beta must be > 0, got {beta}")
    diff = pred - target
    absdiff = diff.abs()
    per_elem = torch.where(absdiff < beta, 0.5 * diff * diff, absdiff - 0.5 * beta)
    return per_elem.mean()


class FeatureExtractor(nn.Module):
    """Frozen conv feature stack with three taps for the perceptual term."""

    STAGES = ((64, 64), (128, 128), (256, 256, 256))

    def __init__(self, weights_path=None, seed=0):
        super().__init__()
        # the whole construction runs on a pinned seed so that building the
        # extractor never shifts the caller's RNG stream
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            layers = []
            tap_indices = []
            c_in = 3
            for s, widths in enumerate(self.STAGES):
                if s > 0:
                    layers.append(nn.MaxPool2d(2))
                for c_out in widths:
                    layers.append(nn.Conv2d(c_in, c_out, 3, padding=1))
                    layers.append(nn.ReLU(inplace=False))
                    c_in = c_out
                tap_indices.append(len(layers) - 1)
            self.features = nn.Sequential(*layers)
            self.tap_indices = tuple(tap_indices)
            self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
            if weights_path is not None:
                self._load_weights(weights_path)
            else:
                log.warning(
                    "no perceptual weights supplied; using pinned-seed random features"
                )
                for m in self.features:
                    if isinstance(m, nn.Conv2d):
                        nn.init.trunc_normal_(m.weight, std=0.02)
                        nn.init.zeros_(m.bias)
        finally:
            torch.random.set_rng_state(gen_state)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _load_weights(self, path):
        data = np.load(path, allow_pickle=False)
        with data:
            state = {k: torch.from_numpy(data[k].copy()) for k in data.files}
        # tolerate plain torchvision-style "features.N.weight" naming
        self.features.load_state_dict(
            {k.removeprefix("features."): v for k, v in state.items()}, strict=True
        )

    def train(self, mode=True):
        return super().train(False)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        x = (x - self.mean) / self.std
        taps = []
        for idx, layer in enumerate(self.features):
            x = layer(x)
            if idx in self.tap_indices:
                taps.append(x)
        return taps


def perceptual_loss(pred, target, extractor):
    """Sum over taps of mean squared feature error."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    total = None
    for fp, ft in zip(extractor(pred), extractor(target)):
        term = torch.mean((fp - ft) ** 2)
        total = term if total is None else total + term
    return total


@dataclasses.dataclass
class LossBundle:
    smooth_l1: torch.Tensor
    perceptual: torch.Tensor
    total: torch.Tensor
    weight: float


def total_loss(pred, target, extractor, weight=0.04, beta=1.0):
    """smooth_l1 + weight * perceptual, bundled with its parts."""
    if weight < 0:
        raise ParamError(f"perceptual weight must be >= 0, got {weight}")
    s = smooth_l1(pred, target, beta)
    p = perceptual_loss(pred, target, extractor)
    return LossBundle(smooth_l1=s, perceptual=p, total=s + weight * p, weight=weight)
