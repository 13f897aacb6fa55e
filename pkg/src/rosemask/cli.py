"""Command-line entry point for the masking/classification workflow.

Subcommands: synth, mask build, mask apply, sweep, train, eval, audit,
report. Configuration comes from an optional JSON file plus flag overrides
(flags win); the ROSEMASK_OUT environment variable overrides the configured
output root. All randomness flows from the single master seed, so reruns
with identical config produce byte-identical artifacts.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluate, roi_mask, synthgen
from .classifier import (
    ModelConfig,
    NumericError,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    save_training_log,
    train,
)
from .dataset import LabeledDataset, load_split, save_split
from .image_core import Image, load_image, save_image
from .metrics import compute_metrics, confusion
from .roi_mask import MaskSpec, apply_mask, build_mask, load_mask, mask_dataset, privacy_audit
from .synthgen import DEFAULT_FACE_PARAMS, FaceParams, SplitCounts

OUT_ENV_VAR = "ROSEMASK_OUT"

_CONFIG_KEYS = {
    "seed",
    "counts",
    "face_params",
    "top_percent",
    "variant",
    "train",
    "sweep",
    "use_mask",
    "out_dir",
}


@dataclass
class RunConfig:
    seed: int = 42
    counts: SplitCounts = field(default_factory=SplitCounts)
    face_params: FaceParams = field(default_factory=FaceParams)
    top_percent: float = 29.0
    variant: str = "tiny"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30))
    sweep_t_min: int = 20
    sweep_t_max: int = 35
    sweep_epochs: int = 3
    use_mask: bool = True
    out_dir: Path = Path("out")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        if "counts" in raw:
            cfg.counts = SplitCounts(**raw["counts"])
        if "face_params" in raw:
            cfg.face_params = FaceParams.from_dict(raw["face_params"])
        if "top_percent" in raw:
            cfg.top_percent = float(raw["top_percent"])
        if "variant" in raw:
            cfg.variant = str(raw["variant"])
        if "train" in raw:
            cfg.train = TrainConfig(**raw["train"])
        if "sweep" in raw:
            sweep_raw = dict(raw["sweep"])
            cfg.sweep_t_min = int(sweep_raw.pop("t_min", cfg.sweep_t_min))
            cfg.sweep_t_max = int(sweep_raw.pop("t_max", cfg.sweep_t_max))
            cfg.sweep_epochs = int(sweep_raw.pop("epochs", cfg.sweep_epochs))
            if sweep_raw:
                raise ValueError(f"unknown sweep config keys: {sorted(sweep_raw)}")
        if "use_mask" in raw:
            cfg.use_mask = bool(raw["use_mask"])
        if "out_dir" in raw:
            cfg.out_dir = Path(raw["out_dir"])
        return cfg


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    env_out = os.environ.get(OUT_ENV_VAR)
    if env_out:
        cfg.out_dir = Path(env_out)
    # Flag overrides win over both the config file and the environment.
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "top_percent", None) is not None:
        cfg.top_percent = args.top_percent
    if getattr(args, "variant", None) is not None:
        cfg.variant = args.variant
    if getattr(args, "epochs", None) is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        cfg.train = replace(cfg.train, batch_size=args.batch_size)
    if getattr(args, "learning_rate", None) is not None:
        cfg.train = replace(cfg.train, learning_rate=args.learning_rate)
    if getattr(args, "out", None) is not None:
        cfg.out_dir = Path(args.out)
    return cfg


def _data_root(args: argparse.Namespace, cfg: RunConfig) -> Path:
    return Path(args.data) if getattr(args, "data", None) else cfg.out_dir / "data"


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    root = _data_root(args, cfg)
    synthgen.write_generated(root, cfg.seed, cfg.counts, cfg.face_params)
    c = cfg.counts
    print(f"wrote {c.train_pos + c.train_neg} train, {c.val_pos + c.val_neg} val, "
          f"{c.test_pos + c.test_neg} test images to {root}")
    return 0


def cmd_mask_build(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    root = _data_root(args, cfg)
    train_data, _ = synthgen.load_generated(root, "train")
    mask, report = build_mask(
        train_data, MaskSpec(top_percent=cfg.top_percent, dims=train_data.dims)
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    roi_mask.save_mask(mask, cfg.out_dir / "mask.png")
    roi_mask.save_mask_report(report, cfg.out_dir / "mask.json")
    print(f"mask: kept {mask.selected_count} px "
          f"(retention {report.retention_fraction:.4f}, threshold {report.threshold_value:.6f})")
    return 0


def cmd_mask_apply(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    mask = load_mask(args.mask)
    in_path = Path(args.input)
    out_root = cfg.out_dir / "masked" if getattr(args, "out", None) is None else Path(args.out)
    if in_path.is_dir():
        paths = sorted(in_path.rglob("*.png"))
        if not paths:
            raise FileNotFoundError(f"no PNG images under {in_path}")
        for src in paths:
            dst = out_root / src.relative_to(in_path)
            dst.parent.mkdir(parents=True, exist_ok=True)
            save_image(apply_mask(load_image(src), mask), dst)
        print(f"masked {len(paths)} images into {out_root}")
    else:
        out_root.mkdir(parents=True, exist_ok=True)
        dst = out_root / in_path.name
        save_image(apply_mask(load_image(in_path), mask), dst)
        print(f"masked image written to {dst}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    root = _data_root(args, cfg)
    train_data, _ = synthgen.load_generated(root, "train")
    val_data, _ = synthgen.load_generated(root, "val")
    t_values = range(cfg.sweep_t_min, cfg.sweep_t_max + 1)
    records, selected = evaluate.sweep(
        train_data,
        val_data,
        t_values,
        sweep_epochs=cfg.sweep_epochs,
        mcfg=ModelConfig.for_variant(cfg.variant, train_data.dims),
        tcfg=cfg.train,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    evaluate.write_sweep_csv(records, cfg.out_dir / "sweep.csv")
    evaluate.write_sweep_svg(records, cfg.out_dir / "sweep.svg")
    print(f"selected t={selected:g}")
    return 0


def _load_split_for_model(args: argparse.Namespace, cfg: RunConfig, split: str) -> LabeledDataset:
    root = _data_root(args, cfg)
    data, _ = synthgen.load_generated(root, split)
    if getattr(args, "mask", None):
        data = mask_dataset(data, load_mask(args.mask))
    return data


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    train_data = _load_split_for_model(args, cfg, "train")
    val_data = _load_split_for_model(args, cfg, "val")
    model = train(
        train_data, val_data, ModelConfig.for_variant(cfg.variant, train_data.dims), cfg.train
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, cfg.out_dir / "model.rmck")
    save_training_log(model, cfg.out_dir / "training_log.jsonl")
    final = model.log[-1]
    print(f"trained {cfg.train.epochs} epochs; final train loss {final['train_loss']:.6f}, "
          f"val accuracy {final.get('val_accuracy', float('nan')):.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    data = _load_split_for_model(args, cfg, args.split)
    preds = predict(model, data)
    cm = confusion(preds, data.labels)
    metrics = compute_metrics(cm)
    payload = {
        "split": args.split,
        "use_mask": bool(getattr(args, "mask", None)),
        "test_confusion": cm.to_dict(),
        "test_metrics": metrics.to_dict(),
    }
    _write_json(payload, cfg.out_dir / f"metrics_{args.split}.json")
    print(json.dumps(payload["test_metrics"], sort_keys=True))
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    mask = load_mask(args.mask)
    root = _data_root(args, cfg)
    manifest = json.loads((root / synthgen.MANIFEST_NAME).read_text())
    boxes = roi_mask.LandmarkBoxes.from_dict(manifest["landmarks"])
    audit = privacy_audit(mask, boxes)
    _write_json(audit.to_dict(), cfg.out_dir / "audit.json")
    print(f"identity-region retention: {audit.overall:.4f}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    unmasked = json.loads(Path(args.unmasked).read_text())
    masked = json.loads(Path(args.masked).read_text())
    table = evaluate.comparison_table(unmasked, masked)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "comparison.txt").write_text(table + "\n")
    print(table)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rosemask",
        description="Privacy-preserving rosacea detection via redness-informed masking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--data", help="dataset root (default <out>/data)")
    p.set_defaults(func=cmd_synth)

    mask_parser = sub.add_parser("mask", help="build or apply the ROI mask")
    mask_sub = mask_parser.add_subparsers(dest="mask_command", required=True)

    p = mask_sub.add_parser("build", help="build the mask from training positives")
    _add_common(p)
    p.add_argument("--data", help="dataset root (default <out>/data)")
    p.add_argument("--top-percent", type=float, dest="top_percent", help="retained top percentage")
    p.set_defaults(func=cmd_mask_build)

    p = mask_sub.add_parser("apply", help="apply a mask PNG to an image or directory")
    _add_common(p)
    p.add_argument("--mask", required=True, help="mask PNG path")
    p.add_argument("--input", required=True, help="image file or directory of PNGs")
    p.set_defaults(func=cmd_mask_apply)

    p = sub.add_parser("sweep", help="validation sweep over mask thresholds")
    _add_common(p)
    p.add_argument("--data", help="dataset root (default <out>/data)")
    p.add_argument("--variant", choices=("tiny", "resnet18"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the classifier")
    _add_common(p)
    p.add_argument("--data", help="dataset root (default <out>/data)")
    p.add_argument("--mask", help="mask PNG to apply before training")
    p.add_argument("--variant", choices=("tiny", "resnet18"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root (default <out>/data)")
    p.add_argument("--mask", help="mask PNG to apply before evaluation")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="privacy audit of a mask against landmark boxes")
    _add_common(p)
    p.add_argument("--mask", required=True, help="mask PNG path")
    p.add_argument("--data", help="dataset root holding the manifest (default <out>/data)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="masked-vs-original comparison table")
    _add_common(p)
    p.add_argument("--unmasked", required=True, help="metrics/report JSON of the original run")
    p.add_argument("--masked", required=True, help="metrics/report JSON of the masked run")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
