"""Flat binary weight container.

Layout: ``b"SGK1"`` then, per parameter, ``u32 name_len | utf-8 name |
u32 rank | u32 extents... | f32 data`` (all little-endian). Records run to
end of file.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SGK1"


class CheckpointError(ValueError):
    pass


def dumps(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    out: dict[str, np.ndarray] = {}
    pos = 4
    n = len(blob)

    def take(size: int) -> bytes:
        nonlocal pos
        if pos + size > n:
            raise CheckpointError(f"truncated record at byte offset {pos}")
        piece = blob[pos : pos + size]
        pos += size
        return piece

    while pos < n:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        out[name] = data.astype(np.float32)
    return out


def save(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
