"""Image I/O, degradation, patch sampling and augmentation.

Images are ``uint8`` arrays of shape (height, width, 3). Training tensors are
float arrays in [0, 1] laid out (batch, 3, height, width).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InputError
from .resample import downsample_matrix

log = logging.getLogger(__name__)

_ACCEPTED_MODES = {"RGB", "RGBA", "L", "LA", "P"}


def load_png(path):
    """Decode an 8-bit PNG into an (h, w, 3) uint8 array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DecodeError(f"{path}: not a PNG file (format {im.format})")
            if im.mode not in _ACCEPTED_MODES:
                raise DecodeError(f"{path}: unsupported bit depth / mode {im.mode!r}; 8-bit RGB expected")
            im.load()
            rgb = im.convert("RGB")
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
    return np.asarray(rgb, dtype=np.uint8).copy()


def save_png(image, path):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"save_png expects an (h, w, 3) uint8 array, got {image.dtype} {image.shape}")
    Image.fromarray(image, mode="RGB").save(Path(path), format="PNG")


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png" and p.is_file())


def load_dataset(directory):
    """All PNG images in a directory as ``(name, image)`` pairs, sorted by name."""
    paths = list_images(directory)
    if not paths:
        raise InputError(f"{directory}: no PNG images found")
    return [(p.name, load_png(p)) for p in paths]


# ---------------------------------------------------------------- colour


def rgb_to_y(image):
    """BT.601 studio-swing luma in [16, 235] as float64."""
    rgb = np.asarray(image, dtype=np.float64)
    return 16.0 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]) / 255.0


# ---------------------------------------------------------------- degradation


def crop_to_multiple(image, scale):
    h, w = image.shape[:2]
    return image[: h - h % scale, : w - w % scale]


def downscale(image, scale):
    """Antialiased Keys bicubic decimation of a float (h, w, ...) array."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    mh = downsample_matrix(h, scale)
    mw = downsample_matrix(w, scale)
    return np.einsum("ih,hwc,jw->ijc", mh, image, mw, optimize=True)


def quantize(values):
    """Round float samples in the 0..255 range to uint8."""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def degrade(hr, scale):
    """Bicubic LR counterpart of an HR image (cropped to a multiple of ``scale``)."""
    hr = crop_to_multiple(np.asarray(hr, dtype=np.uint8), scale)
    if scale == 1:
        return hr.copy()
    return quantize(downscale(hr, scale))


def lr_for(hr_path, hr, scale, cache=False):
    """LR image for ``hr``, optionally cached under ``<dir>/LRx<scale>/<name>``."""
    if not cache:
        return degrade(hr, scale)
    hr_path = Path(hr_path)
    cached = hr_path.parent / f"LRx{scale}" / hr_path.name
    if cached.exists():
        return load_png(cached)
    lr = degrade(hr, scale)
    cached.parent.mkdir(exist_ok=True)
    tmp = cached.with_suffix(".tmp.png")
    save_png(lr, tmp)
    tmp.replace(cached)
    return lr


def to_tensor(image):
    """(h, w, 3) uint8 -> (1, 3, h, w) float32 in [0, 1]."""
    return (np.asarray(image, dtype=np.float32) / 255.0).transpose(2, 0, 1)[None].copy()


def to_image(tensor):
    """(1, 3, h, w) or (3, h, w) float in [0, 1] -> clamped, quantized uint8 image."""
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    return quantize(np.clip(arr, 0.0, 1.0).transpose(1, 2, 0) * 255.0)


# ---------------------------------------------------------------- patches


@dataclass
class PatchBatch:
    lr: np.ndarray  # (b, 3, p/scale, p/scale)
    hr: np.ndarray  # (b, 3, p, p)
    scale: int


def sample_patches(hr_images, scale, patch=192, batch=16, seed=None):
    """Random HR crops paired with their degraded LR versions.

    ``seed`` may be an int or a ``numpy.random.Generator`` (advanced in place).
    """
    if patch % scale:
        raise InputError(f"patch {patch} not divisible by scale {scale}")
    rng = np.random.default_rng(seed)
    usable = [im for im in hr_images if im.shape[0] >= patch and im.shape[1] >= patch]
    if len(usable) < len(hr_images):
        log.warning("skipping %d image(s) smaller than %dx%d", len(hr_images) - len(usable), patch, patch)
    if not usable:
        raise InputError(f"no image is at least {patch}x{patch}")
    hrs, lrs = [], []
    for _ in range(batch):
        im = usable[rng.integers(len(usable))]
        top = rng.integers(im.shape[0] - patch + 1)
        left = rng.integers(im.shape[1] - patch + 1)
        crop = im[top : top + patch, left : left + patch]
        hrs.append(crop)
        lrs.append(degrade(crop, scale))
    hr = np.stack(hrs).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    lr = np.stack(lrs).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    return PatchBatch(lr=lr, hr=hr, scale=scale)


def _apply(arr, hflip, vflip, rot):
    if hflip:
        arr = arr[..., ::-1]
    if vflip:
        arr = arr[..., ::-1, :]
    if rot:
        arr = np.rot90(arr, axes=(-2, -1))
    return arr


def augment(batch, seed=None, rotate=True):
    """Per-sample random horizontal flip, vertical flip and 90 degree rotation.

    Each transform is applied with probability 0.5, identically to the LR
    and HR member of a pair.
    """
    rng = np.random.default_rng(seed)
    if rotate and (batch.hr.shape[-1] != batch.hr.shape[-2] or batch.lr.shape[-1] != batch.lr.shape[-2]):
        raise InputError("rotation augmentation needs square patches")
    lr, hr = [], []
    for i in range(batch.hr.shape[0]):
        hflip, vflip, rot = rng.random(3) < 0.5
        rot = rot and rotate
        lr.append(_apply(batch.lr[i], hflip, vflip, rot))
        hr.append(_apply(batch.hr[i], hflip, vflip, rot))
    return PatchBatch(lr=np.ascontiguousarray(np.stack(lr)), hr=np.ascontiguousarray(np.stack(hr)), scale=batch.scale)


# ---------------------------------------------------------------- synthetic data


def synthetic_textures(n=8, size=96, seed=0):
    """Procedural RGB textures: oriented gratings, soft blobs and hard edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = []
    for _ in range(n):
        img = np.zeros((size, size, 3))
        for _ in range(3):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(0.04, 0.22)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            img += rng.uniform(0.15, 0.35) * wave[..., None] * rng.uniform(0.3, 1.0, size=3)
        for _ in range(2):
            cy, cx = rng.uniform(0, size, size=2)
            r = rng.uniform(size / 10, size / 4)
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            img += np.where(inside[..., None], rng.uniform(-0.4, 0.4, size=3), 0.0)
        img = 0.5 + img / max(1.0, 2.0 * np.abs(img).max())
        images.append(quantize(img * 255.0))
    return images
