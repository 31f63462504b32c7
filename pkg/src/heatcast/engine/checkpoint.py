"""Flat binary parameter checkpoints.

Layout (all integers little-endian uint32)::

    b"HGF1"
    header_len, header (UTF-8 JSON object; model kind and hyperparameters, may be {})
    record_count
    per record: name_len, name (UTF-8), rank, extent * rank, float64-LE values

Round trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"HGF1"
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def dump_params(arrays: Mapping[str, np.ndarray], header: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta = json.dumps(dict(header or {}), sort_keys=True).encode("utf-8")
    buf.write(_U32.pack(len(meta)))
    buf.write(meta)
    buf.write(_U32.pack(len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(_U32.pack(len(encoded)))
        buf.write(encoded)
        buf.write(_U32.pack(arr.ndim))
        for extent in arr.shape:
            buf.write(_U32.pack(extent))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def load_params(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into ``(header, {name: float64 array})``."""
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not an HGF1 checkpoint (bad magic)")
    pos = 4

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(view):
            raise CheckpointError("truncated checkpoint")
        (value,) = _U32.unpack_from(view, pos)
        pos += 4
        return value

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = bytes(view[pos : pos + count])
        pos += count
        return chunk

    header = json.loads(take(u32()).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last record")
    return header, arrays


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], header: Mapping | None = None) -> None:
    Path(path).write_bytes(dump_params(arrays, header))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return load_params(Path(path).read_bytes())
