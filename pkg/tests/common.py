"""Shared fixtures and hand-rolled oracles for the test suite."""

import math

import numpy as np
import torch

import starnet as sn


def micro_config(**overrides):
    """Smallest valid network (< 5k parameters), used for gradient checks and
    fast train-loop tests."""
    base = dict(
        depth=2,
        channels=(4, 4),
        input_size=16,
        patch_size=1,
        window_sizes=(4, 2),
        sr_ratios=(2, 1),
        heads=(1, 1),
        dfm_heads=(1, 1),
        cbam_reduction=2,
        cbam_kernel=3,
        msdc_kernels=(1, 3),
        msdc_depth=1,
        cgn_kernel=1,
        dfm_gating_kernel=1,
        chain_kernels=(3,),
    )
    base.update(overrides)
    return sn.StarNetConfig(**base)


def make_clean(size, seed):
    """Structured clean image (smooth gradients + a few shapes), float32."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    phase = rng.uniform(0, 2 * np.pi)
    img = np.stack(
        [
            0.25 + 0.5 * yy,
            0.3 + 0.3 * np.sin(2 * np.pi * xx * rng.integers(1, 4) + phase) ** 2,
            0.2 + 0.6 * xx * yy,
        ],
        axis=-1,
    )
    cy, cx = rng.integers(size // 4, 3 * size // 4, size=2)
    r = size // 6 + 1
    mask = (yy * (size - 1) - cy) ** 2 + (xx * (size - 1) - cx) ** 2 < r * r
    img[mask] = rng.uniform(0.1, 0.9, size=3)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_pairs(n, size, seed):
    """n synthetic (snowy, gt) pairs of a given square size."""
    pairs = []
    for i in range(n):
        clean = make_clean(size, seed + i)
        spec = sn.SnowSynthesisSpec(particle_count=(40, 60), seed=seed + 100 + i)
        pairs.append(sn.synthesize_pair(clean, spec))
    return pairs


def write_dataset(root, pairs, split="train", kind="snow100k"):
    """Write pairs to disk in a named layout; returns the manifest."""
    sub = {"snow100k": ("synthetic", "gt"), "srrs": ("synthetic", "gt"),
           "csd": ("Snow", "Gt")}[kind]
    split_dir = {"csd": split.capitalize()}.get(kind, split)
    for i, (snowy, gt) in enumerate(pairs):
        name = f"img{i:03d}.png"
        sn.save_image(snowy, str(root / split_dir / sub[0] / name))
        sn.save_image(gt, str(root / split_dir / sub[1] / name))
    return sn.load_manifest(str(root), kind, split)


def naive_attention(q, k, v):
    """Scaled-dot attention with explicit loops; q (N,d), k (M,d), v (M,dv)."""
    q, k, v = q.detach(), k.detach(), v.detach()
    n, d = q.shape
    m = k.shape[0]
    out = torch.zeros(n, v.shape[1], dtype=q.dtype)
    for i in range(n):
        energy = torch.tensor(
            [float((q[i] * k[j]).sum()) / math.sqrt(d) for j in range(m)],
            dtype=q.dtype,
        )
        w = torch.exp(energy - energy.max())
        w = w / w.sum()
        for j in range(m):
            out[i] += w[j] * v[j]
    return out


def manual_layer_norm(t, ln):
    """LayerNorm over the last dim, computed from first principles."""
    mu = t.mean(dim=-1, keepdim=True)
    var = t.var(dim=-1, unbiased=False, keepdim=True)
    return (t - mu) / torch.sqrt(var + ln.eps) * ln.weight + ln.bias


def zero_biases(module):
    for p_name, p in module.named_parameters():
        if p_name.endswith("bias"):
            with torch.no_grad():
                p.zero_()
    return module


def zero_all(module):
    for p in module.parameters():
        with torch.no_grad():
            p.zero_()
    return module


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)
