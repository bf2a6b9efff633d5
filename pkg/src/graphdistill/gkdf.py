"""GKDF: the binary container for per-(node, hop, prompt) teacher vectors.

Layout, little-endian:
  magic ``GKDF`` (4 bytes), version u32 = 1, n_records u64, d_L u32,
  dtype u8 (0 = IEEE-754 float32), 3 reserved bytes; then records sorted by
  (node u64, hop u16, prompt u16), each key followed by d_L floats.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GKDF"
VERSION = 1
_HEADER = struct.Struct("<4sIQIB3x")
_KEY = struct.Struct("<QHH")


class GKDFFormatError(ValueError):
    """Malformed GKDF file; the message carries the byte offset."""


def write_gkdf(path: str | Path,
               entries: dict[tuple[int, int, int], np.ndarray],
               d_l: int) -> None:
    """Write entries keyed by (node, hop, prompt_index), sorting the records."""
    keys = sorted(entries)
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(keys), d_l, 0))
        for key in keys:
            vec = np.asarray(entries[key], dtype=np.float32)
            if vec.shape != (d_l,):
                raise ValueError(
                    f"record {key} has shape {vec.shape}, expected ({d_l},)")
            fh.write(_KEY.pack(*key))
            fh.write(vec.astype("<f4").tobytes())


def read_gkdf(path: str | Path) -> tuple[dict[tuple[int, int, int], np.ndarray], int]:
    """Read a GKDF file, widening values to float64.

    Returns (entries, d_L). Raises :class:`GKDFFormatError` with the byte
    offset of the first problem.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise GKDFFormatError(f"truncated header at offset {len(blob)}")
    magic, version, n_records, d_l, dtype = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise GKDFFormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise GKDFFormatError(f"unsupported version {version} at offset 4")
    if dtype != 0:
        raise GKDFFormatError(f"unsupported dtype {dtype} at offset 20")
    record_size = _KEY.size + 4 * d_l
    entries: dict[tuple[int, int, int], np.ndarray] = {}
    offset = _HEADER.size
    prev_key = None
    for _ in range(n_records):
        if offset + record_size > len(blob):
            raise GKDFFormatError(f"truncated record at offset {offset}")
        key = _KEY.unpack_from(blob, offset)
        if prev_key is not None and key <= prev_key:
            raise GKDFFormatError(
                f"records out of (node, hop, prompt) order at offset {offset}")
        prev_key = key
        vec = np.frombuffer(blob, dtype="<f4", count=d_l,
                            offset=offset + _KEY.size)
        entries[key] = vec.astype(np.float64)
        offset += record_size
    if offset != len(blob):
        raise GKDFFormatError(f"trailing bytes at offset {offset}")
    return entries, d_l
