"""Image quality metrics, computed in float64 on RGB arrays."""

import math

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParamError, ShapeError


def _to_chw(img):
    """Accept numpy (H,W) / (H,W,C) or torch (C,H,W) / (B=1,C,H,W); return
    float64 numpy (C,H,W)."""
    if isinstance(img, torch.Tensor):
        arr = img.detach().cpu().numpy()
        if arr.ndim == 4:
            if arr.shape[0] != 1:
                raise ShapeError(f"expected a single image, got batch {arr.shape}")
            arr = arr[0]
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ShapeError(f"cannot interpret tensor shape {arr.shape} as an image")
        return arr.astype(np.float64)
    arr = np.asarray(img)
    if arr.ndim == 2:
        return arr[None].astype(np.float64)
    if arr.ndim == 3:
        return np.moveaxis(arr, -1, 0).astype(np.float64)
    raise ShapeError(f"cannot interpret array shape {arr.shape} as an image")


def psnr(pred, gt, peak=1.0):
    """10 * log10(peak^2 / MSE); returns +inf when the images match exactly."""
    if peak <= 0:
        raise ParamError(f"peak must be > 0, got {peak}")
    a = _to_chw(pred)
    b = _to_chw(gt)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img, win):
    """Separable valid-mode correlation of a (H, W) image with a 1-d window."""
    out = sliding_window_view(img, win.size, axis=0) @ win
    out = sliding_window_view(out, win.size, axis=1) @ win
    return out


def ssim(pred, gt, window_size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean structural similarity over channels, Gaussian-windowed."""
    if peak <= 0:
        raise ParamError(f"peak must be > 0, got {peak}")
    if window_size % 2 == 0 or window_size < 3:
        raise ParamError(f"window_size must be odd and >= 3, got {window_size}")
    a = _to_chw(pred)
    b = _to_chw(gt)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[1] < window_size or a.shape[2] < window_size:
        raise ParamError(
            f"image {a.shape[1]}x{a.shape[2]} smaller than window {window_size}"
        )
    win = _gaussian_window(window_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    values = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mu_x = _filter_valid(x, win)
        mu_y = _filter_valid(y, win)
        var_x = _filter_valid(x * x, win) - mu_x * mu_x
        var_y = _filter_valid(y * y, win) - mu_y * mu_y
        cov = _filter_valid(x * y, win) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))
