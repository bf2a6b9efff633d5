"""Versioned binary checkpoint of named float64 parameter tensors."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GDCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    offset = 0

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointError(f"truncated checkpoint at offset {offset}")
        vals = struct.unpack_from(fmt, blob, offset)
        offset += size
        return vals

    magic = blob[:4]
    offset = 4
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    meta = json.loads(blob[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = take("<Q")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<I")
        shape = tuple(take("<Q")[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        nbytes = 8 * size
        if offset + nbytes > len(blob):
            raise CheckpointError(f"truncated tensor {name} at offset {offset}")
        arr = np.frombuffer(blob, dtype="<f8", count=size,
                            offset=offset).reshape(shape).copy()
        offset += nbytes
        tensors[name] = arr
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes at offset {offset}")
    return tensors, meta
