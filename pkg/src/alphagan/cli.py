"""Command line entry point: compose, train, predict, evaluate, preview."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import datapipe
from .config import load_config, write_effective_config
from .imgcore import load_rgb, load_trimap, save_alpha, save_rgb, save_trimap
from .metrics import evaluate_dirs
from .trainer import load_generator, predict, resume, train_loop

log = logging.getLogger("alphagan")


def _threads() -> int:
    value = os.environ.get("ALPHAGAN_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        raise SystemExit(f"ALPHAGAN_THREADS must be an integer, got {value!r}")


def _parse_set(items: list[str]) -> dict:
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


def _require_dirs(*dirs):
    for d in dirs:
        if not Path(d).is_dir():
            raise FileNotFoundError(f"not a directory: {d}")


def cmd_compose(args) -> int:
    _require_dirs(args.fg, args.alpha, args.bg)
    cfg = load_config(args.config, _parse_set(args.set))
    manifest = datapipe.build_composition_set(
        args.fg, args.alpha, args.bg, args.out, per_fg=args.per_fg, seed=args.seed,
        cfg=cfg.augment, bit_depth=args.bit_depth, workers=_threads(),
    )
    effective = {"command": "compose", "per_fg": args.per_fg, "seed": args.seed,
                 "bit_depth": args.bit_depth, **cfg.to_dict()}
    write_effective_config(effective, args.out)
    log.info("wrote %d composites to %s", len(manifest["samples"]), args.out)
    return 0


def _train_overrides(args) -> dict:
    overrides = _parse_set(args.set)
    if args.steps is not None:
        overrides["train.steps"] = args.steps
    if args.seed is not None:
        overrides["train.seed"] = args.seed
        overrides["augment.seed"] = args.seed
    if args.no_gan:
        overrides["train.gan_enabled"] = False
    if args.no_aspp:
        overrides["generator.use_aspp"] = False
    if args.no_skips:
        overrides["generator.use_skips"] = False
    if args.output_stride is not None:
        overrides["generator.output_stride"] = args.output_stride
    return overrides


def cmd_train(args) -> int:
    data = Path(args.data)
    _require_dirs(data / "fg", data / "alpha", data / "bg")
    cfg = load_config(args.config, _train_overrides(args))
    dataset = datapipe.CompositingDataset.from_dirs(data / "fg", data / "alpha", data / "bg", cfg.augment)
    state = resume(args.resume, cfg) if args.resume else None
    write_effective_config(cfg.to_dict(), args.out)
    state = train_loop(dataset, cfg, out_dir=args.out, state=state, pretrained=args.pretrained)
    log.info("finished at step %d; final checkpoint in %s", state.step, Path(args.out) / "final")
    return 0


def _predict_one(model, image_path, trimap_path, out_path, clamp, bit_depth):
    image, trimap = load_rgb(image_path), load_trimap(trimap_path)
    if image.shape[:2] != trimap.shape:
        raise ValueError(f"{image_path}: image {image.shape[:2]} and trimap {trimap.shape} differ in size")
    save_alpha(predict(image, trimap, model, clamp_known=clamp), out_path, bit_depth)


def cmd_predict(args) -> int:
    model = load_generator(args.weights)
    image, trimap, out = Path(args.image), Path(args.trimap), Path(args.out)
    if image.is_dir():
        _require_dirs(trimap)
        out.mkdir(parents=True, exist_ok=True)
        for path in sorted(image.glob("*.png")):
            tri_path = trimap / path.name
            if not tri_path.is_file():
                raise FileNotFoundError(f"missing trimap for {path.name}")
            _predict_one(model, path, tri_path, out / path.name, not args.no_clamp, args.bit_depth)
        out_dir = out
    else:
        if not trimap.is_file():
            raise FileNotFoundError(f"missing trimap: {trimap}")
        _predict_one(model, image, trimap, out, not args.no_clamp, args.bit_depth)
        out_dir = out.parent
    write_effective_config({"command": "predict", "weights": str(args.weights), "clamp_known": not args.no_clamp,
                            "bit_depth": args.bit_depth}, out_dir)
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_dirs(args.pred, args.gt, args.trimap, workers=_threads()).scaled(args.scale)
    report.write(args.out)
    write_effective_config({"command": "evaluate", "pred": str(args.pred), "gt": str(args.gt),
                            "trimap": str(args.trimap), "scale": args.scale, **report.params}, args.out)
    for warning in report.warnings:
        log.warning(warning)
    return 0


def cmd_preview(args) -> int:
    cfg = load_config(args.config, _parse_set(args.set))
    seed = cfg.augment.seed if args.seed is None else args.seed
    dataset = datapipe.CompositingDataset.from_dirs(args.fg, args.alpha, args.bg, cfg.augment, seed=seed)
    out = Path(args.out)
    records = []
    for i in range(args.n):
        sample = dataset[i]
        save_rgb(sample.composite, out / f"{i:03d}_composite.png", 8)
        save_trimap(sample.trimap, out / f"{i:03d}_trimap.png")
        save_alpha(sample.alpha_gt, out / f"{i:03d}_alpha.png", 8)
        records.append({"index": i, **sample.params})
    with open(out / "manifest.json", "w") as fh:
        json.dump({"seed": seed, "n": args.n, "samples": records}, fh, indent=2)
    write_effective_config({"command": "preview", "seed": seed, **cfg.to_dict()}, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alphagan", description="Adversarial natural image matting.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (nested sections or dotted keys)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")

    p = sub.add_parser("compose", help="build a composited test set")
    common(p)
    p.add_argument("--fg", required=True)
    p.add_argument("--alpha", required=True)
    p.add_argument("--bg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-fg", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("train", help="train generator and discriminator")
    common(p)
    p.add_argument("--data", required=True, help="directory with fg/, alpha/ and bg/ PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--pretrained", help="ResNet-50 weights (torch state dict or tensor directory)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-gan", action="store_true")
    p.add_argument("--no-aspp", action="store_true")
    p.add_argument("--no-skips", action="store_true")
    p.add_argument("--output-stride", type=int, choices=(8, 16))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict alpha mattes")
    p.add_argument("--weights", required=True, help="checkpoint directory")
    p.add_argument("--image", required=True, help="PNG file or directory")
    p.add_argument("--trimap", required=True, help="PNG file or directory")
    p.add_argument("--out", required=True, help="output PNG (or directory)")
    p.add_argument("--no-clamp", action="store_true", help="keep network output on known regions")
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="SAD/MSE/gradient/connectivity report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--trimap", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", choices=("raw", "paper"), default="raw")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("preview", help="dump augmented training samples")
    common(p)
    p.add_argument("--fg", required=True)
    p.add_argument("--alpha", required=True)
    p.add_argument("--bg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_preview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(_threads())
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported to the user, exit code carries failure
        if args.verbose:
            log.exception("%s failed", args.command)
        else:
            print(f"alphagan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
