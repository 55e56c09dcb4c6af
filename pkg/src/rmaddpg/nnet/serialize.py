"""Flat, versioned, named-array container for checkpoints.

Byte layout (all integers little-endian, all floats IEEE-754 binary64
little-endian):

    offset  size        field
    0       8           magic b"ARRPACK1" (format version baked into byte 8)
    8       4           u32 M: metadata length in bytes
    12      M           UTF-8 JSON object with caller metadata
    12+M    4           u32 K: number of arrays
    then, K times:
            2           u16 L: array name length in bytes
            L           UTF-8 array name
            1           u8 ndim
            4 * ndim    u32 per-axis sizes
            8 * prod    float64 values, C (row-major) order

Array names must be unique; insertion order is preserved on round-trip.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

MAGIC = b"ARRPACK1"
_MAX_NDIM = 8


def pack_arrays(arrays: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    """Serialize named float64 arrays plus a JSON metadata object."""
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(meta_bytes)), meta_bytes]
    chunks.append(struct.pack("<I", len(arrays)))
    seen = set()
    for name, arr in arrays.items():
        if name in seen:
            raise ValueError(f"duplicate array name {name!r}")
        seen.add(name)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"array {name!r} contains non-finite values")
        if arr.ndim > _MAX_NDIM:
            raise ValueError(f"array {name!r} has too many axes ({arr.ndim})")
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ValueError(f"array name too long: {name!r}")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8", copy=False).tobytes())
    return b"".join(chunks)


def unpack_arrays(data: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    """Inverse of :func:`pack_arrays`; returns (arrays, metadata)."""
    if data[:8] != MAGIC:
        raise ValueError("not an ARRPACK1 container")
    offset = 8
    (meta_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    metadata = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        values = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        if name in arrays:
            raise ValueError(f"duplicate array name {name!r} in container")
        arrays[name] = values.reshape(shape).astype(np.float64)
    if offset != len(data):
        raise ValueError("trailing bytes after last array")
    return arrays, metadata


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    Path(path).write_bytes(pack_arrays(arrays, metadata))


def load_arrays(path: str | Path) -> Tuple[Dict[str, np.ndarray], dict]:
    return unpack_arrays(Path(path).read_bytes())
