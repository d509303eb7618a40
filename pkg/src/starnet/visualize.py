"""Rendering: feature-map grids, loss curves, metric report files/figures."""

import json
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .errors import ParamError

MAX_GRID_CHANNELS = 64


def feature_grid(fmap, max_channels=MAX_GRID_CHANNELS):
    """(C, H, W) array -> uint8 grid of per-channel min-max normalized tiles.

    Constant channels render mid-gray; at most `max_channels` channels are
    tiled, in a near-square grid (64 -> 8x8).
    """
    arr = np.asarray(fmap, dtype=np.float64)
    if arr.ndim != 3:
        raise ParamError(f"expected (C, H, W) features, got shape {arr.shape}")
    c, h, w = arr.shape
    k = min(c, max_channels)
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    grid = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for idx in range(k):
        ch = arr[idx]
        lo, hi = ch.min(), ch.max()
        if hi > lo:
            tile = np.round((ch - lo) / (hi - lo) * 255.0).astype(np.uint8)
        else:
            tile = np.full((h, w), 128, dtype=np.uint8)
        r, col = divmod(idx, cols)
        grid[r * h : (r + 1) * h, col * w : (col + 1) * w] = tile
    return grid


def dump_features(model, image, level, out_dir):
    """Save the grid images of the maps entering and leaving the level-`level`
    degenerate filter for one (H, W, 3) input image. Returns the file paths."""
    from .data import to_tensor

    depth = model.config.depth
    if not 0 <= level < depth:
        raise ParamError(f"level {level} out of range 0..{depth - 1}")
    was_training = model.training
    model.eval()
    x = to_tensor(image)[None].to(next(model.parameters()).dtype)
    _, taps = model.forward_with_taps(x)
    if was_training:
        model.train()
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for tag in ("pre_filter", "post_filter"):
        grid = feature_grid(taps[tag][level][0].cpu().numpy())
        path = os.path.join(out_dir, f"level{level}_{tag}.png")
        Image.fromarray(grid).save(path)
        paths.append(path)
    return paths


## ----------------------------------------------------------------- reports


def write_metric_report(records, aggregate, path):
    """Line-delimited JSON: header, one record per image, aggregate."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    header = {
        "type": "header",
        "metrics": ["psnr_db", "ssim"],
        "color_space": "rgb",  # metrics computed on RGB, not luminance
        "count": len(records),
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for rec in records:
            f.write(json.dumps({"type": "record", **rec}) + "\n")
        f.write(json.dumps({"type": "aggregate", **aggregate}) + "\n")
    return path


def save_metric_figure(records, aggregate, path):
    """Per-image PSNR/SSIM scatter with aggregate reference lines."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    idx = np.arange(len(records))
    psnrs = np.array([r["psnr_db"] for r in records], dtype=np.float64)
    ssims = np.array([r["ssim"] for r in records], dtype=np.float64)
    finite = np.isfinite(psnrs)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(idx[finite], psnrs[finite], "o", ms=4, color="tab:blue")
    if finite.any():
        ax1.axhline(psnrs[finite].mean(), ls="--", lw=1, color="tab:blue")
    if (~finite).any():
        ax1.plot(idx[~finite], np.full((~finite).sum(), psnrs[finite].max() if finite.any() else 1.0),
                 "^", ms=6, color="tab:red", label="inf (exact match)")
        ax1.legend(loc="best", fontsize=8)
    ax1.set_ylabel("PSNR (dB)")
    ax1.set_title(f"per-image metrics (n={len(records)}, RGB)")
    ax2.plot(idx, ssims, "o", ms=4, color="tab:green")
    ax2.axhline(ssims.mean(), ls="--", lw=1, color="tab:green")
    ax2.set_ylabel("SSIM")
    ax2.set_xlabel("image index")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def write_loss_log(states, path):
    """CSV of per-step losses."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write("epoch,step,lr,loss_total,loss_smooth_l1,loss_perceptual\n")
        for s in states:
            f.write(
                f"{s.epoch},{s.step},{s.lr!r},{s.loss_total!r},"
                f"{s.loss_smooth_l1!r},{s.loss_perceptual!r}\n"
            )
    return path


def save_loss_curve(states, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    steps = [s.step for s in states]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(steps, [s.loss_total for s in states], label="total", lw=1.2)
    ax.plot(steps, [s.loss_smooth_l1 for s in states], label="smooth L1", lw=1.0)
    ax.plot(steps, [s.loss_perceptual for s in states], label="perceptual", lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
