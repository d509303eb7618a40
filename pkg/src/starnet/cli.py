"""Command line interface.

Subcommands: train, eval, infer, synth, dump-features.
"""

import argparse
import json
import logging
import os
import sys

from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .data import (
    SnowSynthesisSpec,
    load_image,
    load_manifest,
    save_image,
    synthesize_pair,
)
from .errors import DataError, StarNetError
from .model import build
from .train import evaluate, load_train_setup, make_optimizer, train
from .visualize import (
    dump_features,
    save_loss_curve,
    save_metric_figure,
    write_loss_log,
    write_metric_report,
)

log = logging.getLogger("starnet")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _cmd_train(args):
    cfg, model_cfg = load_train_setup(args.config)
    manifest = load_manifest(args.data, cfg.dataset_kind, "train")
    log.info("training on %d pairs from %s", manifest.count, args.data)
    start_epoch = 0
    optimizer = None
    if args.resume:
        model, meta, opt_arrays = load_checkpoint(args.resume)
        start_epoch = meta["epoch"]
        if cfg.precision == "float64":
            model.double()
        else:
            model.float()
        optimizer = make_optimizer(model, cfg)
        if opt_arrays:
            restore_optimizer(optimizer, model, meta, opt_arrays)
        log.info("resumed from %s at epoch %d", args.resume, start_epoch)
    else:
        model = build(model_cfg, seed=cfg.seed)
    states = []
    for state in train(
        model, manifest, cfg, out_dir=args.out,
        optimizer=optimizer, start_epoch=start_epoch,
    ):
        states.append(state)
        if state.step % args.log_every == 0 or state.checkpoint_path:
            log.info(
                "epoch %d step %d lr %.3g total %.6f (smooth %.6f, perceptual %.6f)",
                state.epoch, state.step, state.lr,
                state.loss_total, state.loss_smooth_l1, state.loss_perceptual,
            )
    if not states:
        raise DataError("no training steps ran")
    write_loss_log(states, os.path.join(args.out, "loss_log.csv"))
    save_loss_curve(states, os.path.join(args.out, "loss_curve.png"))
    print(f"final loss {states[-1].loss_total:.6f}")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_eval(args):
    model, meta, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.data, args.kind, args.split)
    records, aggregate = evaluate(model, manifest)
    out_dir = args.out or "."
    report = write_metric_report(records, aggregate, os.path.join(out_dir, "metrics.jsonl"))
    figure = save_metric_figure(records, aggregate, os.path.join(out_dir, "metrics.png"))
    print(json.dumps({"type": "aggregate", **aggregate}))
    print(f"report: {report}")
    print(f"figure: {figure}")
    return 0


def _iter_images(path):
    if os.path.isdir(path):
        names = sorted(
            n for n in os.listdir(path) if n.lower().endswith(IMAGE_SUFFIXES)
        )
        if not names:
            raise DataError(f"no images found under {path}")
        return [os.path.join(path, n) for n in names]
    if not os.path.exists(path):
        raise DataError(f"input not found: {path}")
    return [path]


def _cmd_infer(args):
    import torch

    from .data import from_tensor, to_tensor

    model, meta, _ = load_checkpoint(args.ckpt)
    model.eval()
    os.makedirs(args.out, exist_ok=True)
    dtype = next(model.parameters()).dtype
    for src in _iter_images(args.input):
        img = load_image(src)
        with torch.no_grad():
            pred = model(to_tensor(img)[None].to(dtype))
        dst = os.path.join(args.out, os.path.splitext(os.path.basename(src))[0] + ".png")
        save_image(from_tensor(pred), dst)
        log.info("%s -> %s", src, dst)
    print(f"outputs in {args.out}")
    return 0


def _cmd_synth(args):
    spec = SnowSynthesisSpec.from_file(args.spec)
    sources = _iter_images(args.clean)
    snowy_dir = os.path.join(args.out, "train", "synthetic")
    gt_dir = os.path.join(args.out, "train", "gt")
    import dataclasses

    for i, src in enumerate(sources):
        clean = load_image(src)
        per_image = dataclasses.replace(spec, seed=spec.seed + i)
        snowy, gt = synthesize_pair(clean, per_image)
        name = os.path.splitext(os.path.basename(src))[0] + ".png"
        save_image(snowy, os.path.join(snowy_dir, name))
        save_image(gt, os.path.join(gt_dir, name))
    print(f"wrote {len(sources)} pairs under {args.out} (snow100k layout)")
    return 0


def _cmd_dump_features(args):
    model, meta, _ = load_checkpoint(args.ckpt)
    image = load_image(args.img)
    paths = dump_features(model, image, args.level, args.out)
    for p in paths:
        print(p)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="starnet", description="single image desnowing"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", default="snow100k", help="dataset layout kind")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", default=None, help="report directory (default: cwd)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("synth", help="synthesize snowy/clean pairs")
    p.add_argument("--spec", required=True, help="synthesis spec file")
    p.add_argument("--clean", required=True, help="directory of clean images")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("dump-features", help="save filter tap feature grids")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--img", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=_cmd_dump_features)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StarNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
