"""Command-line entry point: train, infer, eval, audit, bench.

Exit codes are fixed for CI consumption: 0 success, 1 runtime error,
2 configuration error (including bad flags and config files), 3 data error.
A plain-text ``key=value`` config file can seed any subcommand's options;
explicit command-line flags win.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as dio
from .audit import bench_fps, count_macs, format_block_report, machine_descriptor
from .errors import ConfigError, DataError, UHNetError
from .evaluation import default_thresholds, evaluate, nms_thin
from .model import PRESETS, ModelConfig, UHNet, build
from .train import TrainConfig, fit

_REFERENCE_TOTALS = {"uhnet": 42_300, "uhnet_m": 232_900, "uhnet_l": 873_400}


def _parse_scales(text: str):
    try:
        return tuple(float(s) for s in text.split(",") if s)
    except ValueError:
        raise ConfigError(f"bad --scales value {text!r}; expected comma-separated floats")


_CONVERTERS = {
    "epochs": int, "batch_size": int, "seed": int, "size": int, "warmup": int,
    "iters": int, "thresholds": int,
    "lr": float, "weight_decay": float, "max_dist": float,
    "hflip": lambda s: s.lower() in ("1", "true", "yes"),
    "rotate": lambda s: s.lower() in ("1", "true", "yes"),
    "nms": lambda s: s.lower() in ("1", "true", "yes"),
    "scales": _parse_scales,
}


def _read_config_file(path, allowed):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    values = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in allowed:
            raise ConfigError(f"{p}:{lineno}: unknown config key {key!r}")
        conv = _CONVERTERS.get(key, str)
        try:
            values[key] = conv(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{p}:{lineno}: bad value for {key!r}: {exc}")
    return values


def _merge_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Layer defaults < config file < explicit flags (parser defaults are None)."""
    file_values = _read_config_file(args.config, set(defaults)) if args.config else {}
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))
    return args


def _load_model(args) -> UHNet:
    if getattr(args, "checkpoint", None):
        config = ModelConfig.preset(args.preset) if getattr(args, "preset", None) else None
        return ckpt.load(args.checkpoint, config=config)
    if getattr(args, "preset", None):
        return build(ModelConfig.preset(args.preset), seed=getattr(args, "seed", 0) or 0)
    raise ConfigError("need --preset or --checkpoint")


def _load_pred_map(path) -> np.ndarray:
    arr = dio.load_image(path)  # grayscale comes back replicated to 3 channels
    return arr[0, 0]


def cmd_train(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    records = manifest.split("train")
    if not records:
        raise DataError(f"{manifest.path}: no train records")
    dataset = [dio.load_pair(r) for r in records]
    model = build(ModelConfig.preset(args.preset), seed=args.seed)
    expected = _REFERENCE_TOTALS.get(args.preset)
    note = f" (reference {expected})" if expected else ""
    print(f"model {args.preset}: {model.param_count()} parameters{note}")
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        weight_decay=args.weight_decay, hflip=args.hflip, scales=args.scales,
        rotate=args.rotate, seed=args.seed,
    )
    fit(model, dataset, config, out_dir=args.out, log=print)
    print(f"checkpoints and losses.csv written to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_path in args.images:
        image = dio.load_image(image_path)
        prob = model.predict(image)[0, 0]
        if args.nms:
            prob = nms_thin(prob)
        out_path = out_dir / f"{Path(image_path).stem}_edges.png"
        dio.save_image(out_path, prob)
        print(out_path)
    return 0


def cmd_eval(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    records = manifest.records if args.split == "all" else manifest.split(args.split)
    if not records:
        raise DataError(f"{manifest.path}: no {args.split} records")
    pred_dir = Path(args.pred_dir)
    preds, gts = [], []
    for record in records:
        stem = record.image.stem
        candidates = [pred_dir / f"{stem}_edges.png", pred_dir / f"{stem}.png"]
        pred_path = next((c for c in candidates if c.exists()), None)
        if pred_path is None:
            raise DataError(f"no prediction for {record.image.name} in {pred_dir}")
        preds.append(_load_pred_map(pred_path))
        gts.append(dio.load_gt_set(record))
    summary = evaluate(
        preds, gts, max_dist_fraction=args.max_dist,
        thresholds=default_thresholds(args.thresholds),
    )
    out_csv = Path(args.out) if args.out else pred_dir / "pr_table.csv"
    summary.to_csv(out_csv)
    print(summary.summary_line())
    print(f"pr_table written to {out_csv}")
    return 0


def cmd_audit(args) -> int:
    model = _load_model(args)
    print(format_block_report())
    print()
    report = count_macs(model, args.size, args.size)
    print(report.table())
    if args.csv:
        report.to_csv(args.csv)
        print(f"audit CSV written to {args.csv}")
    return 0


def cmd_bench(args) -> int:
    model = _load_model(args)
    fps = bench_fps(model, args.size, args.size, warmup=args.warmup, iters=args.iters,
                    seed=args.seed)
    print(f"fps: {fps:.2f} ({args.iters} iterations at {args.size}x{args.size}, "
          f"batch 1, single forward)")
    print(f"machine: {machine_descriptor()}")
    return 0


_TRAIN_DEFAULTS = dict(epochs=15, batch_size=1, lr=0.001, weight_decay=0.01,
                       hflip=False, scales=(1.0,), rotate=False, seed=0,
                       out="runs/train", preset="uhnet")
_INFER_DEFAULTS = dict(out="runs/infer", nms=False, seed=0, preset=None)
_EVAL_DEFAULTS = dict(max_dist=0.0075, thresholds=99, split="test", out=None)
_AUDIT_DEFAULTS = dict(size=200, csv=None, preset=None, seed=0)
_BENCH_DEFAULTS = dict(size=200, warmup=2, iters=30, seed=0, preset=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uhnet", description="Ultra-lightweight edge detection toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key=value config file; explicit flags override it")

    p = sub.add_parser("train", help="train a model on a manifest's train split")
    p.add_argument("--preset", choices=sorted(PRESETS), help="architecture preset (default: uhnet)")
    p.add_argument("--manifest", required=True, help="dataset manifest TSV")
    p.add_argument("--out", help="output directory (default: runs/train)")
    p.add_argument("--epochs", type=int, help="training epochs (default: 15)")
    p.add_argument("--batch-size", type=int, dest="batch_size",
                   help="gradient-accumulation batch size (default: 1)")
    p.add_argument("--lr", type=float, help="AdamW learning rate (default: 0.001)")
    p.add_argument("--weight-decay", type=float, dest="weight_decay",
                   help="decoupled weight decay (default: 0.01)")
    p.add_argument("--hflip", action="store_const", const=True,
                   help="random horizontal flips (default: off)")
    p.add_argument("--scales", type=_parse_scales,
                   help="comma-separated rescale factors (default: 1.0)")
    p.add_argument("--rotate", action="store_const", const=True,
                   help="random quarter-turn rotations (default: off)")
    p.add_argument("--seed", type=int, help="rng seed for init and shuffling (default: 0)")
    add_config(p)
    p.set_defaults(func=cmd_train, defaults=_TRAIN_DEFAULTS)

    p = sub.add_parser("infer", help="write edge-map PNGs for images")
    p.add_argument("images", nargs="+", help="input image paths")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="expected architecture; mismatch with the checkpoint is an error")
    p.add_argument("--out", help="output directory (default: runs/infer)")
    p.add_argument("--nms", action="store_const", const=True,
                   help="thin the maps before writing (default: off)")
    p.add_argument("--seed", type=int, help="unused placeholder for uniformity (default: 0)")
    add_config(p)
    p.set_defaults(func=cmd_infer, defaults=_INFER_DEFAULTS)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("--pred-dir", required=True, dest="pred_dir",
                   help="directory of predicted edge PNGs (<stem>_edges.png or <stem>.png)")
    p.add_argument("--manifest", required=True, help="dataset manifest TSV")
    p.add_argument("--split", choices=("train", "test", "all"),
                   help="manifest split to score (default: test)")
    p.add_argument("--max-dist", type=float, dest="max_dist",
                   help="matching tolerance as a fraction of the diagonal "
                        "(default: 0.0075; 0.011 suits lower-precision "
                        "depth-camera ground truth)")
    p.add_argument("--thresholds", type=int, help="number of thresholds (default: 99)")
    p.add_argument("--out", help="pr_table CSV path (default: <pred-dir>/pr_table.csv)")
    add_config(p)
    p.set_defaults(func=cmd_eval, defaults=_EVAL_DEFAULTS)

    p = sub.add_parser("audit", help="parameter and MAC accounting")
    p.add_argument("--preset", choices=sorted(PRESETS), help="architecture preset")
    p.add_argument("--checkpoint", help="audit a trained checkpoint instead")
    p.add_argument("--size", type=int, help="square input size (default: 200)")
    p.add_argument("--csv", help="also write the per-layer audit as CSV")
    p.add_argument("--seed", type=int, help="init seed when building from preset (default: 0)")
    add_config(p)
    p.set_defaults(func=cmd_audit, defaults=_AUDIT_DEFAULTS)

    p = sub.add_parser("bench", help="measure forward throughput")
    p.add_argument("--preset", choices=sorted(PRESETS), help="architecture preset")
    p.add_argument("--checkpoint", help="bench a trained checkpoint instead")
    p.add_argument("--size", type=int, help="square input size (default: 200)")
    p.add_argument("--warmup", type=int, help="untimed warmup forwards (default: 2)")
    p.add_argument("--iters", type=int, help="timed forwards, >= 10 (default: 30)")
    p.add_argument("--seed", type=int, help="input-generation seed (default: 0)")
    add_config(p)
    p.set_defaults(func=cmd_bench, defaults=_BENCH_DEFAULTS)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, args.defaults)
        return args.func(args)
    except ConfigError as exc:  # includes CheckpointError
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except UHNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
