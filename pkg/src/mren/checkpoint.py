"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MREN" | version u32 | json length u64 | json (UTF-8)
    | tensor count u32
    | per tensor: name length u32, name, dtype code u8, rank u8, dims u32 x rank, payload
    | crc32 u32 of everything before it

The JSON header is written with sorted keys and no whitespace so that
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompatibleCheckpointError, IntegrityError

MAGIC = b"MREN"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    """Model config, named tensors and free-form training metadata."""

    config: dict
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def encode(ckpt):
    header = json.dumps({"config": ckpt.config, "meta": ckpt.meta}, sort_keys=True, separators=(",", ":"))
    header = header.encode("utf-8")
    chunks = [MAGIC, struct.pack("<IQ", VERSION, len(header)), header, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", DTYPE_CODES[dt], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise IntegrityError(f"checkpoint truncated: need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf, dtype=None):
    """Parse checkpoint bytes; ``dtype`` (if given) must match every tensor."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise IncompatibleCheckpointError("not an MREN checkpoint (bad magic)")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise IncompatibleCheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(buf) < 8:
        raise IntegrityError("checkpoint truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"checkpoint header unreadable: {exc}") from exc
    (count,) = r.unpack("<I")
    want = None if dtype is None else np.dtype(dtype).newbyteorder("<")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8", errors="replace")
        code, rank = r.unpack("<BB")
        if code not in CODE_DTYPES:
            raise IntegrityError(f"tensor {name!r}: unknown dtype code {code}")
        dt = CODE_DTYPES[code]
        if want is not None and dt != want:
            raise IncompatibleCheckpointError(
                f"tensor {name!r} stored as {dt.name}, expected {want.name}; cross-precision load refused"
            )
        dims = r.unpack(f"<{rank}I")
        payload = r.take(int(np.prod(dims, dtype=np.int64)) * dt.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if r.pos != len(body):
        raise IntegrityError(f"checkpoint has {len(body) - r.pos} unexpected trailing bytes")
    if zlib.crc32(body) != crc:
        raise IntegrityError("checkpoint checksum mismatch (corrupted payload)")
    return Checkpoint(config=header["config"], tensors=tensors, meta=header["meta"])


def save_checkpoint(path, ckpt):
    """Write atomically: a temporary sibling file is renamed over ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode(ckpt))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path, dtype=np.float32):
    return decode(Path(path).read_bytes(), dtype=dtype)
