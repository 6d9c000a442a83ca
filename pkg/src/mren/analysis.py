"""Parameter counts, FLOPs estimates, ablation variants and table output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .model import DRACB_VARIANTS, SCACB_VARIANTS, ModelConfig, MrenModel, conv_layout

# Published complexity figures for the reference network, used for side-by-side
# reporting only.
PUBLISHED_TOTAL = {2: 274_000, 3: 298_000, 4: 298_000}
PUBLISHED_MREB_SWEEP = {3: 196_000, 4: 230_000, 5: 264_000, 6: 298_000, 7: 332_000, 8: 366_000}
PUBLISHED_PER_MREB = 34_000
PUBLISHED_SCACB = {"osa": 245_000, "oca": 375_000, "scnc": 298_000, "full": 298_000}
PUBLISHED_DRACB = {"distill_only": 298_000, "distill_sigmoid": 298_000, "distill_skip": 298_000, "full": 298_000}
PUBLISHED_FLOPS_X2 = 23.8e9


def human(n, unit="K"):
    div = {"K": 1e3, "M": 1e6, "G": 1e9}[unit]
    return f"{n / div:.1f}{unit}"


# ---------------------------------------------------------------- parameters


@dataclass
class ParamReport:
    breakdown: dict  # parameter name -> element count
    total: int
    blocks: dict  # top-level block ("head", "mreb.0", ...) -> count
    per_mreb: int

    def rows(self):
        return [{"block": k, "params": v} for k, v in self.blocks.items()]


def _block_of(name):
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] in ("mreb", "rbwa") else parts[0]


def count_params(model):
    """Exact element counts; accepts an initialized model or a bare config."""
    if isinstance(model, MrenModel):
        breakdown = {name: int(t.size) for name, t in model.params.items()}
        cfg = model.config
    elif isinstance(model, ModelConfig):
        cfg = model
        breakdown = {}
        for layer in conv_layout(cfg):
            breakdown[f"{layer.name}.weight"] = int(np.prod(layer.weight_shape))
            breakdown[f"{layer.name}.bias"] = layer.out_channels
    else:
        raise TypeError(f"expected MrenModel or ModelConfig, got {type(model).__name__}")
    blocks = {}
    for name, n in breakdown.items():
        blocks[_block_of(name)] = blocks.get(_block_of(name), 0) + n
    total = sum(breakdown.values())
    per_mreb = blocks.get("mreb.0", 0)
    return ParamReport(breakdown=breakdown, total=total, blocks=blocks, per_mreb=per_mreb)


# ---------------------------------------------------------------- FLOPs


@dataclass
class FlopsReport:
    resolution: tuple  # (width, height) of the super-resolved output
    convention: str  # "mac" (1 per multiply-accumulate) or "mac2" (2 per MAC)
    layers: list = field(default_factory=list)  # (name, kind, count)
    total: int = 0

    def assumptions(self):
        w, h = self.resolution
        return (
            f"output {w}x{h}, batch 1; convs counted at their own spatial size "
            f"(LR body, upscaled after each reconstruction block); bias = 1 op per output element; "
            f"element-wise ops, pooling and resampling = 1 op per element; concat free; "
            f"convention {self.convention} ({'2 FLOPs' if self.convention == 'mac2' else '1 FLOP'} per MAC)"
        )

    def by_kind(self):
        out = {}
        for _, kind, n in self.layers:
            out[kind] = out.get(kind, 0) + n
        return out


def _elementwise_ops(cfg, lr_h, lr_w):
    """(name, kind, count) for every non-conv op with its element count."""
    c, b, d = cfg.base_channels, cfg.branch_channels, cfg.distill_channels
    hw = lr_h * lr_w
    ops = []

    def gate(prefix, channels, sites):
        mid = channels // cfg.wsilbv_ratio
        ops.extend([
            (f"{prefix}.pool", "pool", channels * sites),
            (f"{prefix}.gelu", "gelu", mid),
            (f"{prefix}.sigmoid", "sigmoid", channels),
            (f"{prefix}.scale", "mul", channels * sites),
            (f"{prefix}.residual", "add", channels * sites),
        ])

    scacb_v, dracb_v = cfg.scacb_variant, cfg.dracb_variant
    width = b * (2 if scacb_v in ("osa", "oca") else 1)
    for i in range(cfg.n_mreb):
        p = f"mreb.{i}"
        for j in range(cfg.mreb_stages + 1):
            q = f"{p}.dracb.{j}"
            communicates = j > 0 and dracb_v in ("full", "distill_skip")
            if communicates:
                ops.append((f"{q}.axpy", "axpy", d * hw))
            if dracb_v != "distill_only" and dracb_v != "distill_skip":
                ops.append((f"{q}.sigmoid", "sigmoid", d * hw))
                ops.append((f"{q}.gate", "mul", d * hw))
            if j == cfg.mreb_stages:
                continue
            s = f"{p}.scacb.{j}"
            ops.append((f"{s}.gelu", "gelu", width * hw))
            if scacb_v == "full":
                ops.extend((f"{s}.exchange.{k}.{part}", "add", width * hw) for k in (1, 2) for part in ("c", "s"))
            ops.append((f"{s}.residual", "add", c * hw))
        gate(f"{p}.wsilbv", c, hw)
        ops.append((f"{p}.residual", "add", c * hw))
    ops.append(("body.skip", "add", c * hw))
    h, w = lr_h, lr_w
    for k, s in enumerate(cfg.rbwa_scales):
        h, w = h * s, w * s
        ops.append((f"rbwa.{k}.resize", "resize", c * h * w))
        ops.append((f"rbwa.{k}.gelu", "gelu", c * h * w))
        gate(f"rbwa.{k}.wsilbv", c, h * w)
    ops.append(("upsample", "resize", 3 * h * w))
    ops.append(("output.add", "add", 3 * h * w))
    return ops


def estimate_flops(config, output_resolution=(1280, 720), convention="mac"):
    """Layer-by-layer operation count for one output image of ``(width, height)``."""
    if convention not in ("mac", "mac2"):
        raise ConfigError(f"convention must be 'mac' or 'mac2', got {convention!r}")
    w, h = output_resolution
    s = config.scale
    if w % s or h % s:
        raise InputError(f"resolution {w}x{h} not divisible by scale {s}")
    lr_h, lr_w = h // s, w // s
    sizes = [(lr_h, lr_w)]
    for f in config.rbwa_scales:
        sizes.append((sizes[-1][0] * f, sizes[-1][1] * f))
    factor = 2 if convention == "mac2" else 1
    layers = []
    for layer in conv_layout(config):
        sites = 1 if layer.pooled else sizes[layer.level][0] * sizes[layer.level][1]
        macs = int(np.prod(layer.weight_shape)) * sites + layer.out_channels * sites
        layers.append((layer.name, "conv", factor * macs))
    layers.extend((name, kind, factor * n) for name, kind, n in _elementwise_ops(config, lr_h, lr_w))
    return FlopsReport(resolution=(w, h), convention=convention, layers=layers, total=sum(n for *_, n in layers))


def conv_macs(in_channels, out_channels, kernel, out_h, out_w, groups=1):
    """Multiply-accumulates of one stride-1 conv, bias excluded."""
    return out_channels * (in_channels // groups) * kernel * kernel * out_h * out_w


# ---------------------------------------------------------------- variants


AXES = {
    "n_mreb": tuple(range(3, 9)),
    "w_comm": None,  # any real in [0, 1]
    "scacb_variant": SCACB_VARIANTS + ("full",),
    "dracb_variant": DRACB_VARIANTS + ("full",),
}
AXIS_ALIASES = {"mreb": "n_mreb", "w": "w_comm", "scacb": "scacb_variant", "dracb": "dracb_variant"}


@dataclass(frozen=True)
class VariantSpec:
    axis: str
    value: object

    def __post_init__(self):
        axis = AXIS_ALIASES.get(self.axis, self.axis)
        if axis not in AXES:
            raise ConfigError(f"unknown ablation axis {self.axis!r}")
        object.__setattr__(self, "axis", axis)
        value = self.value
        if axis == "n_mreb":
            if isinstance(value, str):
                value = int(value) if value.strip().isdigit() else value
            if value not in AXES[axis]:
                raise ConfigError(f"n_mreb must be in 3..8, got {value!r}")
        elif axis == "w_comm":
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"w_comm must be a number, got {value!r}") from None
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"w_comm must be in [0, 1], got {value}")
        elif value not in AXES[axis]:
            raise ConfigError(f"{axis} must be one of {AXES[axis]}, got {value!r}")
        object.__setattr__(self, "value", value)


def build_variant(base, spec):
    """``base`` with the single axis named by ``spec`` changed."""
    if spec.axis == "n_mreb":
        return base.replace(n_mreb=spec.value)
    if spec.axis == "w_comm":
        return base.replace(w_comm=spec.value)
    return base.replace(variant=spec.value)


def all_variant_specs():
    specs = [VariantSpec("n_mreb", n) for n in AXES["n_mreb"]]
    specs += [VariantSpec("w_comm", round(0.1 * k, 1)) for k in range(11)]
    specs += [VariantSpec("scacb_variant", v) for v in AXES["scacb_variant"]]
    specs += [VariantSpec("dracb_variant", v) for v in AXES["dracb_variant"]]
    return specs


# ---------------------------------------------------------------- tables


def _fmt(column, value):
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        key = column.lower()
        if "psnr" in key:
            return f"{value:.2f}"
        if "ssim" in key:
            return f"{value:.4f}"
        if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return f"{value:.6g}"
    return str(value)


def emit_table(rows, columns=None):
    """Aligned text table and RFC 4180 CSV for a list of dict rows.

    Columns follow ``columns`` or the key order of the first row. The text
    uses display formatting (PSNR 2 decimals, SSIM 4, counts as integers);
    the CSV keeps full precision.
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    for r in rows:
        if list(r) != list(columns) and set(r) != set(columns):
            raise ValueError("rows are not homogeneous")
    cells = [[_fmt(c, r[c]) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(wd) for c, wd in zip(columns, widths))]
    lines.append("  ".join("-" * wd for wd in widths))
    lines.extend("  ".join(v.rjust(wd) for v, wd in zip(row, widths)) for row in cells)
    text = "\n".join(lines) if columns else ""

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])
    return text, buf.getvalue()


def parse_csv(text):
    """Read back :func:`emit_table` CSV, converting numeric cells."""

    def convert(v):
        for cast in (int, float):
            try:
                return cast(v)
            except ValueError:
                pass
        return v

    reader = csv.DictReader(io.StringIO(text))
    return [{k: convert(v) for k, v in row.items()} for row in reader]
