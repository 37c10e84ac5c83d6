"""Flat little-endian test-vector files.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"NVT1"
    4       2     dtype code (1 = uint8, 2 = int8, 3 = int32)
    6       2     dim0
    8       2     dim1
    10      2     dim2
    12      4     element count (dim0*dim1*dim2)
    16      ...   payload, C order

Activations are stored as (H, W, C) uint8. Weights use (C_out, C_in, k*k)
int8; depthwise weights have C_in = 1. Raw accumulators use int32.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NVT1"
HEADER = struct.Struct("<4sHHHHI")
assert HEADER.size == 16

DTYPE_CODES = {1: np.dtype("<u1"), 2: np.dtype("<i1"), 3: np.dtype("<i4")}
CODE_OF = {np.dtype(v).str: k for k, v in DTYPE_CODES.items()}


class TestVectorError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.ndim == 4:  # weights (c_out, c_in, k, k)
        a = a.reshape(a.shape[0], a.shape[1], -1)
    if a.ndim != 3:
        raise TestVectorError("test vectors are 3-dimensional")
    if any(d > 0xFFFF for d in a.shape):
        raise TestVectorError("dimension exceeds 65535")
    code = CODE_OF.get(a.dtype.newbyteorder("<").str)
    if code is None:
        raise TestVectorError(f"unsupported dtype {a.dtype}")
    payload = np.ascontiguousarray(a, dtype=DTYPE_CODES[code]).tobytes()
    return HEADER.pack(MAGIC, code, *a.shape, a.size) + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER.size:
        raise TestVectorError("truncated header")
    magic, code, d0, d1, d2, count = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TestVectorError(f"bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise TestVectorError(f"unknown dtype code {code}")
    if count != d0 * d1 * d2:
        raise TestVectorError("element count does not match dims")
    dt = DTYPE_CODES[code]
    if len(buf) != HEADER.size + count * dt.itemsize:
        raise TestVectorError("payload length mismatch")
    return np.frombuffer(buf, dtype=dt, offset=HEADER.size).reshape(d0, d1, d2).copy()


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read_tensor(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
