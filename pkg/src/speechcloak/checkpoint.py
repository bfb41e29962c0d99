"""Versioned binary checkpoint format for model parameters.

Layout (all integers little-endian uint32 unless noted):

    magic "SCLK" | format version | config block (uint32 length + UTF-8 JSON)
    | entry count | entries

Each entry: name (uint32 length + UTF-8), ndim, dims..., float32 LE values.
Save/load of a file is bit-exact: values are stored as float32, so loading
returns the float32-rounded array widened back to float64.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

MAGIC = b"SCLK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_u32(f, v):
    f.write(struct.pack("<I", v))


def _read_u32(f):
    raw = f.read(4)
    if len(raw) != 4:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack("<I", raw)[0]


def _write_bytes(f, b):
    _write_u32(f, len(b))
    f.write(b)


def _read_bytes(f):
    n = _read_u32(f)
    raw = f.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw


def save_checkpoint(path, arrays: dict, config: dict | None = None):
    """Write named arrays (float32 storage) plus a JSON config block."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_u32(buf, FORMAT_VERSION)
    cfg = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    _write_bytes(buf, cfg)
    _write_u32(buf, len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
        _write_bytes(buf, name.encode("utf-8"))
        _write_u32(buf, arr.ndim)
        for d in arr.shape:
            _write_u32(buf, d)
        buf.write(arr.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Return (arrays, config).  Arrays come back as float64 copies of the
    stored float32 values."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version = _read_u32(f)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        config = json.loads(_read_bytes(f).decode("utf-8"))
        count = _read_u32(f)
        arrays = {}
        for _ in range(count):
            name = _read_bytes(f).decode("utf-8")
            ndim = _read_u32(f)
            shape = tuple(_read_u32(f) for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise CheckpointError(f"{path}: truncated data for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        return arrays, config
