"""Training loop, learning-rate schedule, evaluation."""

import dataclasses
import logging
import math
import os

import numpy as np
import torch

from . import kv
from .checkpoint import save_checkpoint
from .data import from_tensor, load_image, random_crop_pair, to_tensor
from .errors import ConfigError, DataError, TrainingError
from .losses import FeatureExtractor, total_loss
from .metrics import psnr, ssim
from .model import PRESETS

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-8
    epochs: int = 210
    lr_halving_period: int = 40
    crop: int = 224
    batch: int = 2
    loss_weight_a: float = 0.04
    smooth_l1_beta: float = 1.0
    seed: int = 0
    preset: str = "full"
    dataset_kind: str = "snow100k"
    steps_per_epoch: int = 0  # 0 = one full pass per epoch
    precision: str = "float32"
    perceptual_weights: str = ""

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.base_lr > 0, f"base_lr must be > 0, got {self.base_lr}")
        need(0 <= self.beta1 < 1, f"beta1 must lie in [0,1), got {self.beta1}")
        need(0 <= self.beta2 < 1, f"beta2 must lie in [0,1), got {self.beta2}")
        need(self.weight_decay >= 0, f"weight_decay must be >= 0, got {self.weight_decay}")
        need(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        need(self.lr_halving_period >= 1,
             f"lr_halving_period must be >= 1, got {self.lr_halving_period}")
        need(self.crop >= 1, f"crop must be >= 1, got {self.crop}")
        need(self.batch >= 1, f"batch must be >= 1, got {self.batch}")
        need(self.loss_weight_a >= 0, f"loss_weight_a must be >= 0, got {self.loss_weight_a}")
        need(self.smooth_l1_beta > 0, f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")
        need(self.steps_per_epoch >= 0,
             f"steps_per_epoch must be >= 0, got {self.steps_per_epoch}")
        need(self.preset in PRESETS, f"unknown preset {self.preset!r}")
        need(self.precision in ("float32", "float64"),
             f"precision must be float32 or float64, got {self.precision!r}")
        return self


@dataclasses.dataclass
class TrainState:
    epoch: int
    step: int  # global step index
    lr: float
    loss_total: float
    loss_smooth_l1: float
    loss_perceptual: float
    checkpoint_path: str | None = None  # set on the last step of an epoch


def lr_at_epoch(base_lr, halving_period, epoch):
    """base_lr halved once per full period elapsed (exact binary arithmetic)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return base_lr * 0.5 ** (epoch // halving_period)


def make_optimizer(model, cfg):
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.base_lr,
        betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
    )


def fixed_precision(enable=True):
    """Single-threaded execution so runs are bitwise reproducible."""
    if enable:
        torch.set_num_threads(1)


def _load_pair(manifest, index):
    pid, snowy_path, gt_path = manifest.pairs[index]
    return pid, load_image(snowy_path), load_image(gt_path)


def _epoch_batches(manifest, cfg, epoch, rng):
    order = rng.permutation(manifest.count)
    if cfg.steps_per_epoch > 0:
        need = cfg.steps_per_epoch * cfg.batch
        idx = [int(order[k % len(order)]) for k in range(need)]
    else:
        idx = [int(i) for i in order]
    batches = [idx[j : j + cfg.batch] for j in range(0, len(idx), cfg.batch)]
    if len(batches) > 1 and len(batches[-1]) < cfg.batch:
        batches.pop()
    return batches


def train(model, manifest, cfg, out_dir=None, extractor=None, optimizer=None, start_epoch=0):
    """Run the training loop, yielding one TrainState per optimizer step.

    Determinism: the permutation and crop windows of epoch e derive from
    seed + e alone, so resuming from an epoch-boundary checkpoint replays the
    exact arithmetic of an uninterrupted run.
    """
    cfg.validate()
    if manifest.count == 0:
        raise DataError("manifest is empty")
    dtype = torch.float64 if cfg.precision == "float64" else torch.float32
    if cfg.precision == "float64":
        fixed_precision()
    model = model.to(dtype)
    if extractor is None:
        extractor = FeatureExtractor(cfg.perceptual_weights or None)
    extractor = extractor.to(dtype)
    if optimizer is None:
        optimizer = make_optimizer(model, cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    model.train()
    step = start_epoch * (cfg.steps_per_epoch or max(1, manifest.count // cfg.batch))
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at_epoch(cfg.base_lr, cfg.lr_halving_period, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng(cfg.seed + epoch)
        batches = _epoch_batches(manifest, cfg, epoch, rng)
        for bi, batch_ids in enumerate(batches):
            xs, ys, names = [], [], []
            for j in batch_ids:
                pid, snowy, gt = _load_pair(manifest, j)
                crop_seed = int(rng.integers(0, 2**31 - 1))
                snowy, gt = random_crop_pair((snowy, gt), cfg.crop, crop_seed)
                xs.append(to_tensor(snowy))
                ys.append(to_tensor(gt))
                names.append(pid)
            x = torch.stack(xs).to(dtype)
            y = torch.stack(ys).to(dtype)
            pred = model(x)
            bundle = total_loss(pred, y, extractor, cfg.loss_weight_a, cfg.smooth_l1_beta)
            if not torch.isfinite(bundle.total):
                if out_dir is not None:
                    dump = os.path.join(out_dir, f"diverged_step{step}.npz")
                    np.savez(dump, x=x.detach().numpy(), y=y.detach().numpy())
                else:
                    dump = "(no out_dir, batch not dumped)"
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {step},"
                    f" batch ids {names}; inputs saved to {dump}"
                )
            optimizer.zero_grad(set_to_none=True)
            bundle.total.backward()
            optimizer.step()
            ckpt_path = None
            if bi == len(batches) - 1 and out_dir is not None:
                ckpt_path = os.path.join(out_dir, f"ckpt_epoch{epoch + 1:04d}.npz")
                save_checkpoint(ckpt_path, model, epoch=epoch + 1, optimizer=optimizer)
            yield TrainState(
                epoch=epoch,
                step=step,
                lr=lr,
                loss_total=bundle.total.detach().item(),
                loss_smooth_l1=bundle.smooth_l1.detach().item(),
                loss_perceptual=bundle.perceptual.detach().item(),
                checkpoint_path=ckpt_path,
            )
            step += 1
        log.info("epoch %d done: lr %.3g", epoch, lr)


def evaluate(model, manifest, max_images=None):
    """Per-image PSNR/SSIM (RGB, float64) plus aggregate means."""
    if manifest.count == 0:
        raise DataError("manifest is empty")
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    try:
        dtype = next(model.parameters()).dtype
    except (StopIteration, AttributeError):
        dtype = torch.float32
    records = []
    n = manifest.count if max_images is None else min(max_images, manifest.count)
    with torch.no_grad():
        for i in range(n):
            pid, snowy, gt = _load_pair(manifest, i)
            x = to_tensor(snowy)[None].to(dtype)
            pred = from_tensor(model(x).clamp(0.0, 1.0))
            records.append(
                {"id": pid, "psnr_db": psnr(pred, gt), "ssim": ssim(pred, gt)}
            )
    if hasattr(model, "train") and was_training:
        model.train()
    aggregate = {
        "mean_psnr_db": float(np.mean([r["psnr_db"] for r in records]))
        if all(math.isfinite(r["psnr_db"]) for r in records)
        else math.inf,
        "mean_ssim": float(np.mean([r["ssim"] for r in records])),
        "count": len(records),
    }
    return records, aggregate


def load_train_setup(path, env=None):
    """Read a flat key=value config file holding TrainConfig fields plus
    model-config overrides; returns (TrainConfig, StarNetConfig).

    STARNET_SEED in the environment overrides the seed.
    """
    from .model import StarNetConfig, preset_config

    with open(path) as f:
        raw = kv.parse_kv_text(f.read())
    train_fields = kv.field_types(TrainConfig)
    model_fields = kv.field_types(StarNetConfig)
    train_raw, model_raw = {}, {}
    for key, val in raw.items():
        if key in train_fields:
            train_raw[key] = val
        elif key in model_fields:
            model_raw[key] = val
        else:
            known = sorted(set(train_fields) | set(model_fields))
            raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(known)}")
    cfg = kv.from_mapping(TrainConfig, train_raw)
    env = os.environ if env is None else env
    if "STARNET_SEED" in env:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env["STARNET_SEED"]))
        except ValueError as exc:
            raise ConfigError(f"STARNET_SEED must be an integer: {env['STARNET_SEED']!r}") from exc
    cfg.validate()
    model_cfg = kv.apply_overrides(preset_config(cfg.preset), model_raw)
    model_cfg.validate()
    return cfg, model_cfg
