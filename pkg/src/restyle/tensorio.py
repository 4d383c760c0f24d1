"""ZSTR binary tensor files.

Layout: magic b"ZSTR", u32 rank, u32 dims[rank], then a little-endian
f32 or f64 payload.  The element width is recovered from the payload
size, so no explicit dtype byte is stored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ZSTR"


class CorruptTensorError(RuntimeError):
    pass


def save_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        payload = arr.astype("<f8").tobytes()
    else:
        payload = arr.astype("<f4").tobytes()
    dims = arr.shape if arr.ndim > 0 else (1,)
    header = MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    Path(path).write_bytes(header + payload)


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CorruptTensorError(f"{path}: bad magic")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + 4 * rank:
        raise CorruptTensorError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    payload = raw[8 + 4 * rank:]
    n = int(np.prod(dims)) if dims else 1
    if len(payload) == 8 * n:
        arr = np.frombuffer(payload, dtype="<f8")
    elif len(payload) == 4 * n:
        arr = np.frombuffer(payload, dtype="<f4")
    else:
        raise CorruptTensorError(f"{path}: payload size {len(payload)} does not match dims {dims}")
    return arr.reshape(dims).copy()
