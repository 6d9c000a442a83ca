"""Separable interpolation weights (bilinear, Keys bicubic).

Every resampling in the package is expressed as a pair of dense matrices,
one per spatial axis, so that ``out = Mh @ x @ Mw.T``. The backward pass of
a resize is then simply ``Mh.T @ g @ Mw``.

All coordinates follow the half-pixel-centre convention: output sample ``i``
sits at input coordinate ``(i + 0.5) / scale - 0.5``. Out-of-range taps are
clamped to the nearest edge sample.
"""

from functools import lru_cache

import numpy as np

KEYS_A = -0.5


def keys_kernel(t, a=KEYS_A):
    """Keys cubic convolution kernel evaluated elementwise."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


@lru_cache(maxsize=None)
def _upsample_matrix(in_size, scale, kind, dtype):
    out_size = in_size * scale
    m = np.zeros((out_size, in_size), dtype=np.float64)
    if scale == 1:
        m[np.arange(in_size), np.arange(in_size)] = 1.0
        return m.astype(dtype)
    src = (np.arange(out_size) + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    if kind == "bilinear":
        offsets = (0, 1)
        weights = (1.0 - frac, frac)
    elif kind == "bicubic":
        offsets = (-1, 0, 1, 2)
        weights = tuple(keys_kernel(frac - o) for o in offsets)
    else:
        raise ValueError(f"unknown resize kind {kind!r}")
    rows = np.arange(out_size)
    for off, w in zip(offsets, weights):
        cols = np.clip(base + off, 0, in_size - 1)
        np.add.at(m, (rows, cols), w)
    return m.astype(dtype)


def upsample_matrix(in_size, scale, kind, dtype=np.float64):
    """(in_size*scale, in_size) interpolation matrix for one axis."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    m = _upsample_matrix(int(in_size), int(scale), kind, np.dtype(dtype).name)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _downsample_matrix(in_size, scale):
    out_size = in_size // scale
    m = np.zeros((out_size, in_size), dtype=np.float64)
    if scale == 1:
        m[np.arange(out_size), np.arange(out_size)] = 1.0
        return m
    # antialiasing: the kernel is stretched by the scale factor
    support = 2.0 * scale
    for j in range(out_size):
        center = (j + 0.5) * scale - 0.5
        lo = int(np.floor(center - support))
        hi = int(np.ceil(center + support))
        taps = np.arange(lo, hi + 1)
        w = keys_kernel((taps - center) / scale)
        w /= w.sum()
        np.add.at(m[j], np.clip(taps, 0, in_size - 1), w)
    return m


def downsample_matrix(in_size, scale):
    """(in_size//scale, in_size) antialiased bicubic decimation matrix."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    m = _downsample_matrix(int(in_size), int(scale))
    m.setflags(write=False)
    return m
