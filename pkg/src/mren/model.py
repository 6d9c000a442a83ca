"""MREN: multilevel refinement enhancement network for super-resolution.

The network is assembled from plain functions over :class:`~mren.autograd.Tensor`
values. Parameters live in a flat :class:`~mren.autograd.ParamStore` with
hierarchical names such as ``mreb.3.scacb.1.compress.weight``; each block
function receives a scoped view of that store.

Topology::

    F0   = conv3x3(I_lr)
    Fn   = MREB_n(... MREB_1(F0))
    Fm   = RBWA(... RBWA(Fn + F0))
    I_sr = conv3x3(Fm) + bicubic(I_lr)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .autograd import (
    ParamStore,
    Tensor,
    add,
    axpy,
    channel_scale,
    concat_channels,
    conv2d,
    gelu,
    global_avg_pool,
    mul,
    resize,
    sigmoid,
)
from .errors import ConfigError, ShapeError

SCACB_VARIANTS = ("osa", "oca", "scnc")
DRACB_VARIANTS = ("distill_only", "distill_sigmoid", "distill_skip")
VARIANTS = ("full",) + SCACB_VARIANTS + DRACB_VARIANTS
KERNELS = (1, 3, 5)


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 4
    n_mreb: int = 6
    base_channels: int = 60
    branch_channels: int = 10
    distill_channels: int = 20
    w_comm: float = 0.2
    wsilbv_ratio: int = 4
    variant: str = "full"
    mreb_stages: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("n_mreb", "base_channels", "branch_channels", "distill_channels", "wsilbv_ratio", "mreb_stages"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.branch_channels >= self.base_channels:
            raise ConfigError("branch_channels must be smaller than base_channels")
        if self.distill_channels >= self.base_channels:
            raise ConfigError("distill_channels must be smaller than base_channels")
        if self.base_channels % self.wsilbv_ratio:
            raise ConfigError(
                f"base_channels={self.base_channels} not divisible by wsilbv_ratio={self.wsilbv_ratio}"
            )
        if not np.isfinite(self.w_comm):
            raise ConfigError("w_comm must be finite")

    @property
    def rbwa_scales(self):
        """Upsampling factor of each reconstruction block, in order."""
        return {2: (2,), 3: (3,), 4: (2, 2)}[self.scale]

    @property
    def n_rbwa(self):
        return len(self.rbwa_scales)

    @property
    def scacb_variant(self):
        return self.variant if self.variant in SCACB_VARIANTS else "full"

    @property
    def dracb_variant(self):
        return self.variant if self.variant in DRACB_VARIANTS else "full"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ConvLayer:
    """Static description of one convolution in the network.

    ``level`` counts the reconstruction upsamplings preceding the layer (0 for
    the LR body). ``pooled`` marks convs applied to globally pooled (1x1) maps.
    """

    name: str
    in_channels: int
    out_channels: int
    kernel: int
    groups: int = 1
    level: int = 0
    pooled: bool = False

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    @property
    def n_params(self):
        return int(np.prod(self.weight_shape)) + self.out_channels


def _wsilbv_layout(prefix, channels, ratio, level):
    mid = channels // ratio
    return [
        ConvLayer(f"{prefix}.reduce", channels, mid, 1, level=level, pooled=True),
        ConvLayer(f"{prefix}.expand", mid, channels, 1, level=level, pooled=True),
    ]


def _scacb_layout(prefix, cfg):
    c, variant = cfg.base_channels, cfg.scacb_variant
    parts = {"osa": ("spatial",), "oca": ("channel",)}.get(variant, ("channel", "spatial"))
    width = cfg.branch_channels * (2 if len(parts) == 1 else 1)
    layers = [ConvLayer(f"{prefix}.compress", c, width, 1)]
    for part in parts:
        groups = width if part == "spatial" else 1
        for k, ks in enumerate(KERNELS):
            layers.append(ConvLayer(f"{prefix}.{part}.{k}", width, width, ks, groups=groups))
    for part in parts:
        layers.append(ConvLayer(f"{prefix}.{part}_fuse", width * len(KERNELS), width, 1))
    layers.append(ConvLayer(f"{prefix}.restore", width * len(parts), c, 1))
    return layers


def _mreb_layout(prefix, cfg):
    c, d = cfg.base_channels, cfg.distill_channels
    layers = []
    for j in range(cfg.mreb_stages):
        layers.append(ConvLayer(f"{prefix}.dracb.{j}.conv", c, d, 1))
        layers.extend(_scacb_layout(f"{prefix}.scacb.{j}", cfg))
    layers.append(ConvLayer(f"{prefix}.dracb.{cfg.mreb_stages}.conv", c, d, 1))
    layers.append(ConvLayer(f"{prefix}.fuse", d * (cfg.mreb_stages + 1), c, 1))
    layers.extend(_wsilbv_layout(f"{prefix}.wsilbv", c, cfg.wsilbv_ratio, 0))
    return layers


def _rbwa_layout(prefix, cfg, level):
    c = cfg.base_channels
    return [
        ConvLayer(f"{prefix}.conv", c, c, 3, level=level),
        *_wsilbv_layout(f"{prefix}.wsilbv", c, cfg.wsilbv_ratio, level),
        ConvLayer(f"{prefix}.compress", c, c, 1, level=level),
    ]


def conv_layout(cfg):
    """Every convolution of the network in parameter-creation order."""
    layers = [ConvLayer("head", 3, cfg.base_channels, 3)]
    for i in range(cfg.n_mreb):
        layers.extend(_mreb_layout(f"mreb.{i}", cfg))
    for k in range(cfg.n_rbwa):
        layers.extend(_rbwa_layout(f"rbwa.{k}", cfg, k + 1))
    layers.append(ConvLayer("tail", cfg.base_channels, 3, 3, level=cfg.n_rbwa))
    return layers


@dataclass
class MrenModel:
    config: ModelConfig
    params: ParamStore = field(repr=False)

    def __call__(self, lr):
        return mren_forward(lr, self)

    @property
    def dtype(self):
        return self.params.dtype

    def astype(self, dtype):
        return MrenModel(self.config, self.params.astype(dtype))

    def num_params(self):
        return self.params.num_elements()


def init_model(config, seed=None, dtype=np.float32):
    """Fan-in uniform weights, zero biases; deterministic given the seed."""
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"expected ModelConfig, got {type(config).__name__}")
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    params = ParamStore()
    for layer in conv_layout(config):
        fan_in = layer.weight_shape[1] * layer.kernel * layer.kernel
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=layer.weight_shape)
        params.add(f"{layer.name}.weight", w.astype(dtype))
        params.add(f"{layer.name}.bias", np.zeros(layer.out_channels, dtype=dtype))
    return MrenModel(config, params)


def _conv(x, p, name, groups=1):
    return conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], groups=groups)


def _check_channels(block, x, expected):
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"{block}: expected {expected} input channels, got shape {x.shape}")


# ---------------------------------------------------------------- blocks


def scacb(x, p, variant="full"):
    """Space-channel adaptive coordination block.

    A 1x1 compression feeds a channel part (ordinary 1/3/5 convs) and a
    spatial part (depthwise 1/3/5 convs). With exchange enabled, the input of
    each stage after the first is the compressed map plus the previous stage
    output of the opposite part. Each part concatenates its stage outputs and
    fuses them with a 1x1 conv; the fused parts are concatenated, restored to
    the input width and added back to ``x``.
    """
    parts = {"osa": ("spatial",), "oca": ("channel",)}.get(variant, ("channel", "spatial"))
    exchange = variant == "full"
    z = gelu(_conv(x, p, "compress"))
    width = z.shape[1]
    outs = {part: [] for part in parts}
    for k in range(len(KERNELS)):
        prev = {part: outs[part][-1] if outs[part] else None for part in parts}
        for part in parts:
            other = "spatial" if part == "channel" else "channel"
            inp = z
            if exchange and prev.get(other) is not None:
                inp = add(z, prev[other])
            groups = width if part == "spatial" else 1
            outs[part].append(_conv(inp, p, f"{part}.{k}", groups=groups))
    fused = [_conv(concat_channels(outs[part]), p, f"{part}_fuse") for part in parts]
    y = _conv(concat_channels(fused), p, "restore")
    return add(y, x)


def dracb(x, prev, p, w_comm, variant="full"):
    """Distillation with communicating self-gated attention.

    Returns ``(features, state)`` where ``state`` is the fused attention map
    handed to the next block, or ``None`` for variants without communication.
    """
    raw = _conv(x, p, "conv")
    if variant == "distill_only":
        return raw, None
    if variant == "distill_sigmoid":
        return mul(raw, sigmoid(raw)), None
    if prev is None:
        fused = raw
    else:
        if prev.shape != raw.shape:
            raise ShapeError(f"dracb: previous attention map {prev.shape} does not match {raw.shape}")
        fused = axpy(w_comm, prev, raw)
    if variant == "distill_skip":
        return fused, fused
    return mul(fused, sigmoid(fused)), fused


def wsilbv(x, p):
    """Squeeze gate with two 1x1 convs around a reduced width, plus residual."""
    mask = sigmoid(_conv(gelu(_conv(global_avg_pool(x), p, "reduce")), p, "expand"))
    return add(x, channel_scale(x, mask))


def mreb(x, p, cfg):
    _check_channels("mreb", x, cfg.base_channels)
    state = None
    distilled = []
    r = x
    for j in range(cfg.mreb_stages):
        d, state = dracb(r, state, p.scope(f"dracb.{j}"), cfg.w_comm, cfg.dracb_variant)
        distilled.append(d)
        r = scacb(r, p.scope(f"scacb.{j}"), cfg.scacb_variant)
    d, _ = dracb(r, state, p.scope(f"dracb.{cfg.mreb_stages}"), cfg.w_comm, cfg.dracb_variant)
    distilled.append(d)
    y = _conv(concat_channels(distilled), p, "fuse")
    return add(wsilbv(y, p.scope("wsilbv")), x)


def rbwa(x, p, stage_scale):
    """Bilinear upsample, 3x3 conv + GELU, gate, 1x1 compression."""
    y = resize("bilinear", x, stage_scale)
    y = gelu(_conv(y, p, "conv"))
    y = wsilbv(y, p.scope("wsilbv"))
    return _conv(y, p, "compress")


def mren_forward(lr, model):
    """Super-resolve ``lr`` (n, 3, h, w) to (n, 3, scale*h, scale*w).

    The output is not clamped.
    """
    cfg, params = model.config, model.params
    lr = lr if isinstance(lr, Tensor) else Tensor(lr)
    _check_channels("mren_forward", lr, 3)
    f0 = _conv(lr, params, "head")
    f = f0
    for i in range(cfg.n_mreb):
        f = mreb(f, params.scope(f"mreb.{i}"), cfg)
    f = add(f, f0)
    for k, s in enumerate(cfg.rbwa_scales):
        f = rbwa(f, params.scope(f"rbwa.{k}"), s)
    return add(_conv(f, params, "tail"), resize("bicubic", lr, cfg.scale))
