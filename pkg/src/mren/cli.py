"""Command-line entry point: ``mren {train,infer,eval,analyze,ablate}``.

Exit statuses: 0 success, 1 usage/config error, 2 data or I/O error,
3 numerical failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis as A
from . import data as D
from .checkpoint import load_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    DecodeError,
    InputError,
    NonFiniteLossError,
    ShapeError,
    UsageError,
)
from .model import ModelConfig, init_model
from .training import (
    AdamState,
    TrainConfig,
    TrainLog,
    evaluate,
    fit,
    lr_at,
    model_from_checkpoint,
    train_step,
    upscale,
    windowed_mean,
)

OK, USAGE, DATA, NUMERIC = 0, 1, 2, 3
CONFIG_SECTIONS = {"model", "train", "data"}
DATA_KEYS = {"hr_dir", "cache_lr"}


class DataError(Exception):
    """Raised inside commands for conditions that map to exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def load_config_file(path):
    """Parse the JSON experiment file into (ModelConfig kwargs, TrainConfig kwargs, data dict)."""
    if path is None:
        return {}, {}, {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    data = doc.get("data", {})
    if set(data) - DATA_KEYS:
        raise ConfigError(f"{path}: unknown data keys {sorted(set(data) - DATA_KEYS)}")
    model, train = doc.get("model", {}), doc.get("train", {})
    ModelConfig.from_dict(model)  # validates keys and values
    TrainConfig.from_dict(train)
    return model, train, data


def _overrides(args, mapping):
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


def _load_model(spec):
    """Checkpoint path -> model; the literal ``bicubic`` -> None (baseline)."""
    if spec == "bicubic":
        return None
    path = Path(spec)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return model_from_checkpoint(load_checkpoint(path))
    except ConfigError as exc:
        raise DataError(f"{path}: {exc}") from None


def _data_dir(path):
    if path is None:
        raise ConfigError("a data directory is required (--data-dir or data.hr_dir in the config)")
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"data directory not found: {path}")
    return path


# ---------------------------------------------------------------- commands


def cmd_train(args):
    model_kw, train_kw, data = load_config_file(args.config)
    model_kw.update(_overrides(args, {"scale": "scale", "n_mreb": "n_mreb"}))
    train_kw.update(
        _overrides(args, {"seed": "seed", "epochs": "total_epochs", "iters": "iterations_per_epoch", "batch": "batch", "patch": "patch"})
    )
    data_dir = _data_dir(args.data_dir or data.get("hr_dir"))
    cfg = ModelConfig.from_dict(model_kw)
    tcfg = TrainConfig.from_dict(train_kw)
    images = [im for _, im in D.load_dataset(data_dir)]
    out = Path(args.out)
    model = init_model(cfg, seed=tcfg.seed)
    log_rows = None
    if args.resume:
        if not Path(args.resume).exists():
            raise DataError(f"checkpoint not found: {args.resume}")
        if (out / "train_log.csv").exists():
            log_rows = TrainLog.from_csv(out / "train_log.csv")

    def report(epoch, lr, loss):
        print(f"epoch {epoch:4d}  lr {lr:.6g}  loss {loss:.6f}", flush=True)

    print(f"model: {cfg}  params: {model.num_params()}")
    try:
        fit(model, images, tcfg, out_dir=out, resume=args.resume, log_rows=log_rows, on_epoch=report)
    except NonFiniteLossError as exc:
        print(f"error: {exc}; last good checkpoint kept in {out}", file=sys.stderr)
        return NUMERIC
    print(f"wrote {out / 'latest.ckpt'} and {out / 'train_log.csv'}")
    return OK


def cmd_infer(args):
    model = _load_model(args.model)
    scale = model.config.scale if model is not None else args.scale
    lr = D.load_png(args.input)
    sr = upscale(model, lr, scale)
    D.save_png(sr, args.output)
    print(f"{args.input} ({lr.shape[1]}x{lr.shape[0]}) -> {args.output} ({sr.shape[1]}x{sr.shape[0]})")
    return OK


def cmd_eval(args):
    model = _load_model(args.model)
    scale = model.config.scale if model is not None else args.scale
    hr_dir = _data_dir(args.hr_dir)
    result = evaluate(model, hr_dir, scale, cache=args.cache_lr)
    rows = [{"image": n, "psnr": p, "ssim": s} for n, p, s in result.rows]
    rows.append({"image": "mean", "psnr": result.mean_psnr, "ssim": result.mean_ssim})
    text, csv_text = A.emit_table(rows)
    print(f"x{scale}  model: {args.model}")
    print(text)
    if args.csv:
        Path(args.csv).write_text(csv_text)
    return OK


def _parse_resolution(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"resolution must look like 1280x720, got {text!r}") from None
    return w, h


def _delta(ours, ref):
    return f"{ours} vs reported {A.human(ref)} (delta {ours - ref:+d}, {100.0 * (ours - ref) / ref:+.1f}%)"


def cmd_analyze(args):
    model_kw, _, _ = load_config_file(args.config)
    model_kw.update(_overrides(args, {"scale": "scale"}))
    cfg = ModelConfig.from_dict(model_kw)
    resolution = _parse_resolution(args.resolution)
    report = A.count_params(cfg)

    print(f"config: {cfg}")
    print(f"total parameters x{cfg.scale}: {_delta(report.total, A.PUBLISHED_TOTAL[cfg.scale])}")
    print(f"per-MREB subtotal: {_delta(report.per_mreb, A.PUBLISHED_PER_MREB)}")
    print()
    print(A.emit_table(report.rows())[0])

    print("\nMREB count sweep")
    rows, prev = [], None
    for n in range(3, 9):
        total = A.count_params(cfg.replace(n_mreb=n)).total
        rows.append({"n_mreb": n, "params": total, "increment": "" if prev is None else total - prev, "reported": A.PUBLISHED_MREB_SWEEP[n]})
        prev = total
    print(A.emit_table(rows)[0])

    for title, published in (("SCACB variants", A.PUBLISHED_SCACB), ("DRACB variants", A.PUBLISHED_DRACB)):
        print(f"\n{title}")
        rows = []
        for v, ref in published.items():
            total = A.count_params(cfg.replace(variant=v)).total
            rows.append({"variant": v, "params": total, "delta_vs_full": total - report.total, "reported": ref})
        print(A.emit_table(rows)[0])

    flops = A.estimate_flops(cfg, resolution, args.convention)
    print(f"\nFLOPs x{cfg.scale} at {resolution[0]}x{resolution[1]}: {flops.total} ({A.human(flops.total, 'G')})")
    print(f"assumptions: {flops.assumptions()}")
    for kind, n in flops.by_kind().items():
        print(f"  {kind:8s} {n}")
    x2 = cfg.replace(scale=2)
    flops2 = A.estimate_flops(x2, resolution, args.convention)
    print(
        f"x2 comparison: {A.human(flops2.total, 'G')} estimated at {resolution[0]}x{resolution[1]} "
        f"({args.convention}) vs reported {A.human(A.PUBLISHED_FLOPS_X2, 'G')}; "
        "the reported counting convention is unknown, so no agreement is implied"
    )
    return OK


def run_ablation(base, axis, values, images, budget_iters, tcfg):
    """Train each variant for ``budget_iters`` steps; one result row per value."""
    rows = []
    for value in values:
        spec = A.VariantSpec(axis, value)
        cfg = A.build_variant(base, spec)
        model = init_model(cfg, seed=tcfg.seed)
        state = AdamState.fresh(model.params)
        rng = np.random.default_rng(tcfg.seed)
        losses = []
        for _ in range(budget_iters):
            batch = D.sample_patches(images, cfg.scale, tcfg.patch, tcfg.batch, rng)
            if tcfg.augment:
                batch = D.augment(batch, rng)
            losses.append(train_step(model, batch, state, lr_at(0, tcfg), tcfg))
        finite = all(np.isfinite(t.data).all() for _, t in model.params.items())
        if not finite:
            raise NonFiniteLossError(f"{spec.axis}={spec.value}: parameters became non-finite")
        rows.append({
            "axis": spec.axis,
            "value": spec.value,
            "params": model.num_params(),
            "final_loss": windowed_mean(losses, 50) if losses else math.nan,
            "iters": budget_iters,
        })
    return rows


def cmd_ablate(args):
    model_kw, train_kw, data = load_config_file(args.config)
    model_kw.setdefault("scale", 2)
    model_kw.update(_overrides(args, {"scale": "scale", "n_mreb": "n_mreb"}))
    train_kw.setdefault("batch", 4)
    train_kw.setdefault("patch", 48)
    train_kw.update(_overrides(args, {"seed": "seed", "batch": "batch", "patch": "patch"}))
    base = ModelConfig.from_dict(model_kw)
    tcfg = TrainConfig.from_dict(train_kw)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    for v in values:
        A.VariantSpec(args.axis, v)  # reject bad values before any training
    images = [im for _, im in D.load_dataset(_data_dir(args.data_dir or data.get("hr_dir")))]
    rows = run_ablation(base, args.axis, values, images, args.budget_iters, tcfg)
    text, csv_text = A.emit_table(rows)
    print(text)
    if args.csv:
        Path(args.csv).write_text(csv_text)
    return OK


# ---------------------------------------------------------------- parser


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="mren", description="MREN super-resolution toolkit", formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a directory of HR PNGs", formatter_class=fmt)
    t.add_argument("--config", help="JSON file with model/train/data sections")
    t.add_argument("--data-dir", help="directory of HR PNG images")
    t.add_argument("--scale", type=int, choices=(2, 3, 4), help="upscaling factor (default from config, else 4)")
    t.add_argument("--out", required=True, help="output directory for checkpoints and train_log.csv")
    t.add_argument("--seed", type=int, help="training seed (default 0)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--epochs", type=int, help="total epochs (default 20)")
    t.add_argument("--iters", type=int, help="iterations per epoch (default 50)")
    t.add_argument("--batch", type=int, help="patches per batch (default 16)")
    t.add_argument("--patch", type=int, help="HR patch side (default 192)")
    t.add_argument("--n-mreb", type=int, help="number of MREBs (default 6)")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="super-resolve one PNG", formatter_class=fmt)
    i.add_argument("--model", required=True, help="checkpoint path, or 'bicubic'")
    i.add_argument("--input", required=True, help="LR PNG")
    i.add_argument("--output", required=True, help="output PNG")
    i.add_argument("--scale", type=int, choices=(2, 3, 4), default=2, help="scale for the bicubic baseline")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="Y-channel PSNR/SSIM on a directory of HR PNGs", formatter_class=fmt)
    e.add_argument("--model", required=True, help="checkpoint path, or 'bicubic'")
    e.add_argument("--hr-dir", required=True, help="directory of HR PNG images")
    e.add_argument("--csv", help="also write results as CSV")
    e.add_argument("--scale", type=int, choices=(2, 3, 4), default=2, help="scale for the bicubic baseline")
    e.add_argument("--cache-lr", action="store_true", help="cache LR images under <hr-dir>/LRx<scale>/")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="parameter and FLOPs report", formatter_class=fmt)
    a.add_argument("--config", help="JSON file with a model section")
    a.add_argument("--scale", type=int, choices=(2, 3, 4), help="override the model scale")
    a.add_argument("--resolution", default="1280x720", help="output resolution WxH for FLOPs")
    a.add_argument("--convention", choices=("mac", "mac2"), default="mac", help="FLOPs per multiply-accumulate")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("ablate", help="short training runs over one ablation axis", formatter_class=fmt)
    b.add_argument("--axis", required=True, choices=("mreb", "w", "scacb", "dracb"))
    b.add_argument("--values", required=True, help="comma-separated axis values")
    b.add_argument("--data-dir", help="directory of HR PNG images")
    b.add_argument("--budget-iters", type=int, default=10, help="training iterations per variant")
    b.add_argument("--config", help="JSON file with model/train/data sections")
    b.add_argument("--scale", type=int, choices=(2, 3, 4), help="upscaling factor (default 2)")
    b.add_argument("--n-mreb", type=int, help="base MREB count (default 6)")
    b.add_argument("--batch", type=int, help="patches per batch (default 4)")
    b.add_argument("--patch", type=int, help="HR patch side (default 48)")
    b.add_argument("--seed", type=int)
    b.add_argument("--csv", help="also write results as CSV")
    b.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (DataError, InputError, DecodeError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC


if __name__ == "__main__":
    sys.exit(main())
