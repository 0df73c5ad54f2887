"""Command-line entry points: train, eval, predict, preview, synth."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .augment import PhotometricConfig, preview_grid
from .checkpoint import CheckpointError
from .config import ConfigError, parse_config, resolve_mapping
from .dataset import DatasetError, load_dataset, make_synthetic_dataset, read_image, save_image
from .evaluation import evaluate_dataset, render_report, report_csv
from .predict import load_model_for_inference, predict_directory
from .taxonomy import InvalidLabelError, MappingError
from .train import TrainingDivergedError, train


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, args.overrides)
    manifest = train(cfg, resume=args.resume)
    print(f"trained to iteration {manifest.end_iteration}; outputs under {cfg.train.output_dir}")
    for entry in manifest.metric_history:
        print(f"  iter {entry['iteration']}: val mIoU {entry['miou']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    model, cfg = load_model_for_inference(args.checkpoint, use_ema=args.use_ema)
    if args.config is not None:
        cfg = parse_config(args.config)
    roots = {"train": cfg.data.train_roots, "val": cfg.data.val_roots}.get(args.split)
    if roots is None:
        raise ConfigError(f"unknown split {args.split!r}; expected train or val")
    if not roots:
        raise ConfigError(f"split {args.split!r} has no dataset roots configured")
    samples = load_dataset(roots)
    report = evaluate_dataset(
        model,
        samples,
        mapping=resolve_mapping(cfg.data),
        model_id=f"{Path(args.checkpoint).name}{'+ema' if args.use_ema else ''}",
        pad_value=cfg.augment.geometric.image_pad_value,
    )
    out_dir = Path(args.output) if args.output else Path(args.checkpoint).resolve().parent.parent / f"eval_{args.split}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(render_report(report, "json") + "\n")
    (out_dir / "report.md").write_text(render_report(report, "markdown") + "\n")
    (out_dir / "report.csv").write_text(report_csv(report))
    from .figures import save_iou_bar_chart

    save_iou_bar_chart(report, out_dir / "iou_per_class.png")
    print(render_report(report, "markdown"))
    print(f"report written to {out_dir}")
    return 0


def _cmd_predict(args) -> int:
    model, cfg = load_model_for_inference(args.checkpoint, use_ema=args.use_ema)
    written = predict_directory(
        model,
        args.input,
        args.output,
        palette=cfg.palette,
        pad_value=cfg.augment.geometric.image_pad_value,
    )
    print(f"wrote {len(written)} files to {args.output}")
    return 0


def _cmd_preview(args) -> int:
    cfg = parse_config(args.config).augment.photometric if args.config else PhotometricConfig()
    grid = preview_grid(read_image(args.image), cfg)
    save_image(args.output, grid)
    print(f"preview grid written to {args.output}")
    return 0


def _cmd_synth(args) -> int:
    samples = make_synthetic_dataset(args.output, count=args.count, size=(args.size, args.size), seed=args.seed)
    print(f"wrote {len(samples)} synthetic samples under {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offroadseg", description="Off-road semantic segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True, help="YAML config file")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="dotted config overrides")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True, help="train or val")
    p.add_argument("--use-ema", action="store_true", help="evaluate the averaged weights")
    p.add_argument("--config", default=None, help="override the config echoed in the checkpoint")
    p.add_argument("--output", default=None, help="report directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write label masks for a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--use-ema", action="store_true")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("preview", help="render the color-jitter preview grid for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_preview)

    p = sub.add_parser("synth", help="generate a small synthetic dataset")
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, MappingError, InvalidLabelError,
            TrainingDivergedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
