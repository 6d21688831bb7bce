"""Binary checkpoint container.

Layout (all integers little-endian unsigned 32-bit, all floats IEEE-754
little-endian float64):

    magic b"DTDN" | version | entry count
    per entry: name length | name (utf-8) | rank | dims[rank] | payload

Rank-0 entries carry scalars (counters, rates); everything else is a dense
float64 array. The format is self-describing enough for `load_checkpoint`
to rebuild the exact dict passed to `save_checkpoint`.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DTDN"
VERSION = 1


def save_checkpoint(path, entries: dict) -> None:
    """Write named float64 arrays (or python scalars) to `path`."""
    blobs = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        blobs.append(struct.pack("<I", len(encoded)))
        blobs.append(encoded)
        blobs.append(struct.pack("<I", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        blobs.append(arr.tobytes())
    Path(path).write_bytes(b"".join(blobs))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into {name: float64 array} (rank 0 for scalars)."""
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape)
        if name in out:
            raise ValueError(f"{path}: duplicate entry {name!r}")
        out[name] = data.astype(np.float64)
    if reader.pos != len(reader.raw):
        raise ValueError(f"{path}: trailing bytes after last entry")
    return out
