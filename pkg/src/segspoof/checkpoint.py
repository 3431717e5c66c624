"""Versioned binary checkpoint container.

Layout (all integers little-endian):
  magic   8 bytes  b"SEGSPOOF"
  version u32
  digest  u16 length + utf-8 config digest
  count   u32 number of tensors
  per tensor: u16 name length + utf-8 name, u8 ndim, u32 per dim,
              raw float64 little-endian data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEGSPOOF"
VERSION = 1


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], config_digest: str) -> None:
    digest_bytes = config_digest.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<H", len(digest_bytes)))
        f.write(digest_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    """Returns (tensors, config digest). Raises CheckpointError on bad files."""
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<H", _read_exact(f, 2))
        digest = _read_exact(f, dlen).decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 8 * n_items), dtype="<f8")
            tensors[name] = data.reshape(shape).astype(np.float64)
    return tensors, digest
