"""Binary weight checkpoints.

Layout: magic "ITN1", little-endian u32 entry count, then per entry a u16
name length, the UTF-8 name, a u8 rank, rank little-endian u32 dims, and
the row-major float32 payload. Round-trips are bit-exact for float32 data.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from ..errors import CheckpointError
from .core import Tensor

MAGIC = b"ITN1"


def save_checkpoint(path, params: Mapping[str, "Tensor | np.ndarray"]):
    """Write named tensors in mapping order."""
    blobs = [MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        # asarray, not ascontiguousarray: the latter promotes rank 0 to rank 1
        arr = np.asarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"entry name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"entry rank too large: {name!r}")
        blobs.append(struct.pack("<H", len(encoded)))
        blobs.append(encoded)
        blobs.append(struct.pack("<B", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blobs))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> float32 array, preserving order."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    view = memoryview(buf)
    pos = 4

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint: {path}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate entry {name!r} in {path}")
        out[name] = np.array(data, dtype=np.float32)
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return out
