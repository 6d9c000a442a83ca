"""L1 / Adam training with step learning-rate decay, checkpointing and evaluation."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .autograd import Tape, Tensor, l1_loss, resize
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ConfigError, InputError, NonFiniteLossError, ShapeError, UsageError
from .metrics import psnr_y, ssim_y
from .model import ModelConfig, init_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    decay_period: int = 600
    decay_factor: float = 0.5
    total_epochs: int = 20
    iterations_per_epoch: int = 50
    batch: int = 16
    patch: int = 192
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.decay_period < 1:
            raise ConfigError("decay_period must be >= 1")
        if self.batch < 1 or self.patch < 1:
            raise ConfigError("batch and patch must be >= 1")
        if self.total_epochs < 0 or self.iterations_per_epoch < 1:
            raise ConfigError("total_epochs must be >= 0 and iterations_per_epoch >= 1")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(epoch, config):
    """Step decay: ``lr0 * decay_factor ** floor(epoch / decay_period)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_period)


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def fresh(cls, params):
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(params, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Bias-corrected Adam update of every parameter, in place."""
    b1, b2 = betas
    for name, t in params.items():
        if t.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient")
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = t.grad
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_step(model, batch, state, lr, config=TrainConfig()):
    """Forward, L1 loss, backward and one Adam update; returns the pre-update loss."""
    if batch.scale != model.config.scale:
        raise ShapeError(f"batch scale x{batch.scale} does not match model scale x{model.config.scale}")
    dtype = model.dtype
    model.params.zero_grad()
    with Tape() as tape:
        loss = l1_loss(model(Tensor(batch.lr.astype(dtype, copy=False))), Tensor(batch.hr.astype(dtype, copy=False)))
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value}")
    tape.backward(loss)
    adam_step(model.params, state, lr, config.betas, config.eps)
    return value


# ---------------------------------------------------------------- logging


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (iteration, epoch, lr, loss, seconds)

    FIELDS = ("iteration", "epoch", "lr", "loss", "seconds")

    def append(self, iteration, epoch, lr, loss, seconds):
        if self.rows and iteration <= self.rows[-1][0]:
            raise ValueError("log iterations must be strictly increasing")
        self.rows.append((int(iteration), int(epoch), float(lr), float(loss), float(seconds)))

    @property
    def losses(self):
        return np.array([r[3] for r in self.rows])

    def epoch_lrs(self):
        return {r[1]: r[2] for r in self.rows}

    def truncate(self, epoch):
        """Drop rows from ``epoch`` onwards (used when resuming)."""
        return TrainLog([r for r in self.rows if r[1] < epoch])

    def to_csv(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for it, ep, lr, loss, sec in self.rows:
                w.writerow([it, ep, repr(lr), repr(loss), f"{sec:.3f}"])
        tmp.replace(path)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [
                (int(r["iteration"]), int(r["epoch"]), float(r["lr"]), float(r["loss"]), float(r["seconds"]))
                for r in reader
            ]
        return cls(rows)


def windowed_mean(values, window, at="end"):
    values = np.asarray(values, dtype=np.float64)
    window = min(window, len(values))
    return float(values[-window:].mean() if at == "end" else values[:window].mean())


# ---------------------------------------------------------------- checkpoints


def make_checkpoint(model, state=None, epoch=0, rng=None, train_config=None):
    tensors = {name: t.data.copy() for name, t in model.params.items()}
    meta = {"epoch": int(epoch)}
    if state is not None:
        tensors.update({f"adam.m.{k}": v.copy() for k, v in state.m.items()})
        tensors.update({f"adam.v.{k}": v.copy() for k, v in state.v.items()})
        meta["adam_step"] = state.step
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    if train_config is not None:
        meta["train"] = train_config.to_dict()
    return Checkpoint(config=model.config.to_dict(), tensors=tensors, meta=meta)


def model_from_checkpoint(ckpt):
    """Rebuild the model, checking tensor names and dims against the config."""
    config = ModelConfig.from_dict(ckpt.config)
    template = init_model(config, dtype=np.float32)
    model_names = set(template.params.names())
    stored = {k for k in ckpt.tensors if not k.startswith("adam.")}
    if stored != model_names:
        missing, extra = sorted(model_names - stored), sorted(stored - model_names)
        raise ConfigError(f"checkpoint does not match config: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, t in template.params.items():
        arr = ckpt.tensors[name]
        if arr.shape != t.shape:
            raise ConfigError(f"checkpoint tensor {name!r} has dims {arr.shape}, config expects {t.shape}")
        t.data = np.array(arr, dtype=arr.dtype)
    return template


def state_from_checkpoint(ckpt, model):
    if "adam_step" not in ckpt.meta:
        return AdamState.fresh(model.params)
    return AdamState(
        m={n: np.array(ckpt.tensors[f"adam.m.{n}"]) for n in model.params},
        v={n: np.array(ckpt.tensors[f"adam.v.{n}"]) for n in model.params},
        step=int(ckpt.meta["adam_step"]),
    )


# ---------------------------------------------------------------- fitting


def fit(model, images, config=TrainConfig(), out_dir=None, resume=None, log_rows=None, on_epoch=None):
    """Train ``model`` in place on a list of HR uint8 images.

    Returns ``(TrainLog, Checkpoint)``. With ``out_dir`` a checkpoint
    ``epoch_XXXX.ckpt`` plus ``latest.ckpt`` and ``train_log.csv`` are written
    after every epoch. ``resume`` (a Checkpoint or path) restores parameters,
    optimizer moments, the sampling RNG and the epoch counter, so the continued
    run matches an uninterrupted one exactly. ``on_epoch(epoch, lr, mean_loss)``
    is called after each epoch is saved.
    """
    if not images:
        raise InputError("empty dataset")
    scale = model.config.scale
    rng = np.random.default_rng(config.seed)
    state = AdamState.fresh(model.params)
    start = 0
    train_log = log_rows if log_rows is not None else TrainLog()
    if resume is not None:
        ckpt = load_checkpoint(resume) if not isinstance(resume, Checkpoint) else resume
        restored = model_from_checkpoint(ckpt)
        if restored.config != model.config:
            raise ConfigError("resume checkpoint was written for a different model config")
        for name, t in model.params.items():
            t.data = restored.params[name].data
        state = state_from_checkpoint(ckpt, model)
        if "rng_state" in ckpt.meta:
            rng.bit_generator.state = ckpt.meta["rng_state"]
        start = int(ckpt.meta.get("epoch", 0))
        train_log = train_log.truncate(start)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    ckpt = make_checkpoint(model, state, start, rng, config)
    t0 = time.perf_counter()
    for epoch in range(start, config.total_epochs):
        lr = lr_at(epoch, config)
        for it in range(config.iterations_per_epoch):
            batch = D.sample_patches(images, scale, config.patch, config.batch, rng)
            if config.augment:
                batch = D.augment(batch, rng)
            loss = train_step(model, batch, state, lr, config)
            train_log.append(epoch * config.iterations_per_epoch + it, epoch, lr, loss, time.perf_counter() - t0)
        ckpt = make_checkpoint(model, state, epoch + 1, rng, config)
        if out_dir is not None:
            save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.ckpt", ckpt)
            save_checkpoint(out_dir / "latest.ckpt", ckpt)
            train_log.to_csv(out_dir / "train_log.csv")
        mean_loss = float(np.mean(train_log.losses[-config.iterations_per_epoch :]))
        log.info("epoch %d  lr %.3g  loss %.5f", epoch + 1, lr, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, lr, mean_loss)
    return train_log, ckpt


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    rows: list  # (name, psnr, ssim)

    @property
    def mean_psnr(self):
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self):
        return float(np.mean([r[2] for r in self.rows]))


def upscale(model, lr_image, scale=None):
    """Super-resolve one uint8 image; ``model=None`` is the bicubic baseline."""
    x = D.to_tensor(lr_image)
    if model is None:
        out = resize("bicubic", Tensor(x), scale)
    else:
        out = model(Tensor(x.astype(model.dtype, copy=False)))
    return D.to_image(out.data)


def evaluate(model, images, scale=None, cache=False):
    """Y-channel PSNR/SSIM of ``model`` on HR images.

    ``images`` is a directory or a list of ``(name, image)`` pairs; ``model``
    may be ``None`` for the bicubic baseline.
    """
    scale = model.config.scale if model is not None else scale
    if scale is None:
        raise ConfigError("scale required for the bicubic baseline")
    if isinstance(images, (str, Path)):
        paths = D.list_images(images)
        if not paths:
            raise InputError(f"{images}: no PNG images found")
        items = [(p.name, D.load_png(p), p) for p in paths]
    else:
        items = [(name, im, None) for name, im in images]
        if not items:
            raise InputError("no images to evaluate")
    rows = []
    for name, hr, path in items:
        hr = D.crop_to_multiple(hr, scale)
        lr = D.lr_for(path, hr, scale, cache=cache and path is not None)
        sr = upscale(model, lr, scale)
        rows.append((name, psnr_y(sr, hr, scale), ssim_y(sr, hr, scale)))
    return EvalResult(rows)
