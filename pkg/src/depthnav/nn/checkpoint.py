"""Binary parameter container.

Layout (little-endian)::

    b"RAPIDCKPT1"  u32 version  u32 meta_len  meta (utf-8 JSON)
    u32 count
    repeated: u16 name_len  name  u8 ndim  u64 dims[ndim]  f64 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RAPIDCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<HB", len(nb), arr.ndim))
            f.write(nb)
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a parameter checkpoint")
    off = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", data, off)
        off += 3
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return arrays, meta
