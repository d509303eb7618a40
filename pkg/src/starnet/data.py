"""Dataset ingestion, synthetic snow generation, cropping, image I/O.

Supported on-disk layouts (directory names matched case-insensitively):
  csd:       root/{Train,Test}/{Snow,Gt}
  srrs:      root/{train,test}/{synthetic,gt}
  snow100k:  root/{train,test}/{synthetic,gt}
Snowy and ground-truth files pair by identical filename, sorted.
"""

import dataclasses
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import kv
from .errors import DataError, ParamError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}

DATASET_LAYOUTS = {
    "csd": ("Snow", "Gt"),
    "srrs": ("synthetic", "gt"),
    "snow100k": ("synthetic", "gt"),
}


@dataclasses.dataclass(frozen=True)
class DatasetManifest:
    root: str
    kind: str
    split: str
    pairs: tuple  # of (id, snowy path, gt path)

    @property
    def count(self):
        return len(self.pairs)


def _resolve_dir(parent, name):
    cand = parent / name
    if cand.is_dir():
        return cand
    if parent.is_dir():
        for child in sorted(parent.iterdir()):
            if child.is_dir() and child.name.lower() == name.lower():
                return child
    raise DataError(f"missing directory {name!r} under {parent}")


def _image_files(directory):
    return {
        p.name: p
        for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    }


def load_manifest(root, dataset_kind, split="train"):
    """Scan a dataset root and pair snowy images with their ground truth."""
    if dataset_kind not in DATASET_LAYOUTS:
        raise DataError(
            f"unknown dataset kind {dataset_kind!r}; choose from {sorted(DATASET_LAYOUTS)}"
        )
    if split not in ("train", "test"):
        raise DataError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root does not exist: {root}")
    snowy_name, gt_name = DATASET_LAYOUTS[dataset_kind]
    split_dir = _resolve_dir(root, split)
    snowy_dir = _resolve_dir(split_dir, snowy_name)
    gt_dir = _resolve_dir(split_dir, gt_name)
    snowy = _image_files(snowy_dir)
    gt = _image_files(gt_dir)
    if not snowy and not gt:
        raise DataError(f"empty dataset: no images under {snowy_dir} or {gt_dir}")
    for name in sorted(set(snowy) ^ set(gt)):
        side = "ground truth" if name in snowy else "snowy input"
        raise DataError(f"unpaired file {name!r}: no matching {side}")
    pairs = tuple(
        (Path(name).stem, str(snowy[name]), str(gt[name])) for name in sorted(snowy)
    )
    return DatasetManifest(root=str(root), kind=dataset_kind, split=split, pairs=pairs)


## ------------------------------------------------------------------ images


def load_image(path):
    """Read an image file to float32 (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def save_image(arr, path):
    """Write a float array in [0, 1] as an 8-bit PNG (round-trip exact for
    values that came from 8-bit sources)."""
    arr = np.asarray(arr)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(data).save(path)
    return path


def to_tensor(img):
    """(H, W, 3) float array -> (3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(img, -1, 0))).float()


def from_tensor(t):
    """(3, H, W) or (1, 3, H, W) tensor -> (H, W, 3) float32 array."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ParamError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    return np.moveaxis(t.detach().cpu().float().numpy(), 0, -1)


## --------------------------------------------------------------- synthesis


@dataclasses.dataclass(frozen=True)
class SnowSynthesisSpec:
    particle_count: tuple[int, ...] = (20, 60)
    size_range: tuple[float, ...] = (1.0, 4.0)
    opacity_range: tuple[float, ...] = (0.4, 0.9)
    blur_sigma: float = 0.7
    veiling: float = 0.15
    seed: int = 0

    def validate(self):
        for name, rng in (
            ("particle_count", self.particle_count),
            ("size_range", self.size_range),
            ("opacity_range", self.opacity_range),
        ):
            if len(rng) != 2:
                raise ParamError(f"{name} must be (low, high), got {rng}")
            if rng[0] > rng[1]:
                raise ParamError(f"{name} range inverted: {rng}")
        if self.particle_count[0] < 0:
            raise ParamError(f"particle_count must be >= 0, got {self.particle_count}")
        if self.size_range[0] <= 0:
            raise ParamError(f"size_range must be positive, got {self.size_range}")
        if not 0.0 <= self.opacity_range[0] <= 1.0 or not 0.0 <= self.opacity_range[1] <= 1.0:
            raise ParamError(f"opacity_range must lie in [0,1], got {self.opacity_range}")
        if self.blur_sigma < 0:
            raise ParamError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if not 0.0 <= self.veiling < 1.0:
            raise ParamError(f"veiling must lie in [0,1), got {self.veiling}")
        return self

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return kv.from_text(cls, f.read()).validate()


def synthesize_pair(clean, spec):
    """Composite soft, blurred snow particles plus a veiling haze over a clean
    image. Deterministic under spec.seed; the clean array is not modified."""
    spec.validate()
    clean = np.asarray(clean, dtype=np.float32)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ParamError(f"clean image must be (H, W, 3), got {clean.shape}")
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise ParamError("clean image values must lie in [0, 1]")
    h, w = clean.shape[:2]
    rng = np.random.default_rng(spec.seed)
    count = int(rng.integers(spec.particle_count[0], spec.particle_count[1] + 1))
    layer = np.zeros((h, w), dtype=np.float32)
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        radius = rng.uniform(*spec.size_range)
        opacity = rng.uniform(*spec.opacity_range)
        dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        disk = np.clip(radius + 0.5 - dist, 0.0, 1.0) * opacity
        layer = np.maximum(layer, disk.astype(np.float32))
    if count > 0 and spec.blur_sigma > 0:
        layer = gaussian_filter(layer, spec.blur_sigma).astype(np.float32)
        layer = np.clip(layer, 0.0, 1.0)
    alpha = layer[..., None]
    snowy = clean * (1.0 - alpha) + alpha  # white particles
    if spec.veiling > 0:
        snowy = snowy * (1.0 - spec.veiling) + spec.veiling
    return np.clip(snowy, 0.0, 1.0).astype(np.float32), clean


def random_crop_pair(pair, size, seed):
    """Crop the same window out of both images of a (snowy, gt) pair."""
    snowy, gt = pair
    if snowy.shape != gt.shape:
        raise ParamError(f"pair shapes differ: {snowy.shape} vs {gt.shape}")
    h, w = snowy.shape[:2]
    if h < size or w < size:
        raise ParamError(f"image {h}x{w} smaller than crop size {size}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return (
        snowy[top : top + size, left : left + size],
        gt[top : top + size, left : left + size],
    )
