import dataclasses
import math
import os

import numpy as np
import pytest
import torch

import starnet as sn
from starnet.errors import ConfigError, DataError, TrainingError

from common import make_pairs, micro_config, write_dataset, zero_all

torch.set_num_threads(1)


def _micro_train_cfg(**overrides):
    base = dict(
        base_lr=1e-3,
        epochs=1,
        crop=16,
        batch=2,
        seed=0,
        preset="tiny",
        steps_per_epoch=2,
        precision="float64",
    )
    base.update(overrides)
    return sn.TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return write_dataset(root, make_pairs(4, 32, seed=0), kind="snow100k")


@pytest.fixture(scope="module")
def extractor():
    return sn.FeatureExtractor(seed=0)


## ----------------------------------------------------------------- schedule


@pytest.mark.parametrize(
    "epoch,expected",
    [
        (0, 2e-5),
        (39, 2e-5),
        (40, 1e-5),
        (80, 5e-6),
        (120, 2.5e-6),
        (160, 1.25e-6),
        (200, 6.25e-7),
    ],
)
def test_lr_schedule_exact_values(epoch, expected):
    assert sn.lr_at_epoch(2e-5, 40, epoch) == expected


def test_lr_schedule_is_piecewise_constant():
    vals = {sn.lr_at_epoch(1.0, 40, e) for e in range(40)}
    assert vals == {1.0}
    assert sn.lr_at_epoch(1.0, 40, 40) == 0.5


def test_lr_schedule_rejects_negative_epoch():
    with pytest.raises(ConfigError):
        sn.lr_at_epoch(2e-5, 40, -1)


## -------------------------------------------------------------- validation


@pytest.mark.parametrize(
    "overrides",
    [
        dict(base_lr=0.0),
        dict(beta1=1.0),
        dict(epochs=0),
        dict(batch=0),
        dict(smooth_l1_beta=0.0),
        dict(preset="enormous"),
        dict(precision="float16"),
        dict(steps_per_epoch=-1),
    ],
)
def test_invalid_train_configs_raise(overrides):
    with pytest.raises(ConfigError):
        dataclasses.replace(sn.TrainConfig(), **overrides).validate()


def test_optimizer_hyperparameters():
    model = sn.build(micro_config())
    opt = sn.make_optimizer(model, sn.TrainConfig())
    group = opt.param_groups[0]
    assert isinstance(opt, torch.optim.Adam)
    assert group["betas"] == (0.9, 0.999)
    assert group["weight_decay"] == 1e-8
    assert group["lr"] == 2e-5


## -------------------------------------------------------------- train loop


def test_training_descends_on_average(dataset, extractor):
    model = sn.build(micro_config(), seed=0)
    cfg = _micro_train_cfg(epochs=4, steps_per_epoch=3)
    states = list(sn.train(model, dataset, cfg, extractor=extractor))
    assert len(states) == 12
    first = np.mean([s.loss_total for s in states[:3]])
    last = np.mean([s.loss_total for s in states[-3:]])
    assert last < first


def test_train_states_carry_schedule_and_indices(dataset, extractor):
    model = sn.build(micro_config(), seed=0)
    cfg = _micro_train_cfg(epochs=2, steps_per_epoch=2, lr_halving_period=1)
    states = list(sn.train(model, dataset, cfg, extractor=extractor))
    assert [s.step for s in states] == [0, 1, 2, 3]
    assert [s.epoch for s in states] == [0, 0, 1, 1]
    assert states[0].lr == 1e-3 and states[-1].lr == 5e-4
    for s in states:
        assert math.isfinite(s.loss_total)
        assert s.loss_total == pytest.approx(
            s.loss_smooth_l1 + cfg.loss_weight_a * s.loss_perceptual, rel=1e-9
        )


def test_fixed_seed_runs_produce_identical_losses(dataset, extractor):
    losses = []
    for _ in range(2):
        model = sn.build(micro_config(), seed=0)
        states = list(
            sn.train(model, dataset, _micro_train_cfg(epochs=2), extractor=extractor)
        )
        losses.append([s.loss_total for s in states])
    assert losses[0] == losses[1]


def test_different_seeds_differ(dataset, extractor):
    runs = []
    for seed in (0, 1):
        model = sn.build(micro_config(), seed=0)
        cfg = _micro_train_cfg(seed=seed)
        states = list(sn.train(model, dataset, cfg, extractor=extractor))
        runs.append([s.loss_total for s in states])
    assert runs[0] != runs[1]


def test_epoch_checkpoints_written_and_resumable(dataset, extractor, tmp_path):
    out = str(tmp_path / "run")
    model = sn.build(micro_config(), seed=0)
    cfg = _micro_train_cfg(epochs=2)
    states = list(sn.train(model, dataset, cfg, out_dir=out, extractor=extractor))
    ckpts = [s.checkpoint_path for s in states if s.checkpoint_path]
    assert len(ckpts) == 2
    assert os.path.basename(ckpts[0]) == "ckpt_epoch0001.npz"

    # resuming from the epoch-1 checkpoint replays epoch 2 exactly
    loaded, meta, arrays = sn.load_checkpoint(ckpts[0])
    opt = sn.make_optimizer(loaded, cfg)
    sn.restore_optimizer(opt, loaded, meta, arrays)
    resumed = list(
        sn.train(
            loaded, dataset, cfg, extractor=extractor,
            optimizer=opt, start_epoch=meta["epoch"],
        )
    )
    tail = [s.loss_total for s in states if s.epoch == 1]
    assert [s.loss_total for s in resumed] == tail


def test_nan_loss_aborts_with_batch_ids(dataset, extractor, tmp_path):
    model = sn.build(micro_config(), seed=0)
    with torch.no_grad():
        model.head[-1].weight.fill_(float("nan"))
    out = str(tmp_path / "diverged")
    with pytest.raises(TrainingError, match="img0"):
        list(
            sn.train(model, dataset, _micro_train_cfg(), out_dir=out, extractor=extractor)
        )
    dumps = [f for f in os.listdir(out) if f.startswith("diverged_step")]
    assert len(dumps) == 1
    with np.load(os.path.join(out, dumps[0])) as data:
        assert data["x"].shape == (2, 3, 16, 16)


def test_empty_manifest_raises(extractor):
    empty = sn.DatasetManifest(root=".", kind="snow100k", split="train", pairs=())
    with pytest.raises(DataError):
        list(sn.train(sn.build(micro_config()), empty, _micro_train_cfg(), extractor=extractor))


## ----------------------------------------------------------------- evaluate


def test_evaluate_identity_model_scores_perfectly(dataset):
    model = zero_all(sn.build(micro_config(), seed=0))  # residual net -> identity
    manifest = dataclasses.replace(
        dataset, pairs=tuple((p[0], p[2], p[2]) for p in dataset.pairs)
    )  # feed gt as input so identity means exact match
    records, aggregate = sn.evaluate(model, manifest)
    assert aggregate["count"] == 4
    assert aggregate["mean_psnr_db"] == math.inf
    assert aggregate["mean_ssim"] == pytest.approx(1.0, abs=1e-9)
    for r in records:
        assert r["psnr_db"] == math.inf
        assert r["ssim"] == pytest.approx(1.0, abs=1e-9)


def test_evaluate_reports_one_record_per_image(dataset):
    model = sn.build(micro_config(), seed=0)
    records, aggregate = sn.evaluate(model, dataset, max_images=3)
    assert len(records) == 3 and aggregate["count"] == 3
    assert [r["id"] for r in records] == ["img000", "img001", "img002"]
    for r in records:
        assert math.isfinite(r["psnr_db"]) and -1.0 <= r["ssim"] <= 1.0


def test_evaluate_restores_training_mode(dataset):
    model = sn.build(micro_config(), seed=0).train()
    sn.evaluate(model, dataset, max_images=1)
    assert model.training is True


## -------------------------------------------------------------- setup files


def test_load_train_setup_splits_train_and_model_keys(tmp_path):
    path = tmp_path / "setup.cfg"
    path.write_text(
        "preset = tiny\nbase_lr = 1e-4\nepochs = 3\ncbam_reduction = 2\n"
    )
    cfg, model_cfg = sn.load_train_setup(str(path), env={})
    assert cfg.base_lr == 1e-4 and cfg.epochs == 3 and cfg.preset == "tiny"
    assert model_cfg.cbam_reduction == 2
    assert model_cfg.channels == sn.tiny_config().channels


def test_load_train_setup_rejects_unknown_key(tmp_path):
    path = tmp_path / "setup.cfg"
    path.write_text("preset = tiny\nmomentum = 0.9\n")
    with pytest.raises(ConfigError, match="momentum"):
        sn.load_train_setup(str(path), env={})


def test_seed_env_override(tmp_path):
    path = tmp_path / "setup.cfg"
    path.write_text("preset = tiny\nseed = 3\n")
    cfg, _ = sn.load_train_setup(str(path), env={"STARNET_SEED": "99"})
    assert cfg.seed == 99
    cfg, _ = sn.load_train_setup(str(path), env={})
    assert cfg.seed == 3
    with pytest.raises(ConfigError):
        sn.load_train_setup(str(path), env={"STARNET_SEED": "many"})
