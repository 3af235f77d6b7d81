"""Minimal binary tensor container.

Layout, all little-endian::

    offset  size      field
    0       4         magic b"NVST"
    4       2         version, u16 (= 1)
    6       1         dtype code, u8 (1 = float32)
    7       1         ndim, u8
    8       4*ndim    dims, u32 each
    ...     4*prod    row-major float32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NVST"
VERSION = 1
DTYPES = {1: np.dtype("<f4")}
_CODES = {v: k for k, v in DTYPES.items()}
_HEAD = struct.Struct("<4sHBB")


class TensorFileError(ValueError):
    pass


def encode_tensor(array) -> bytes:
    a = np.asarray(array, dtype="<f4", order="C")
    if a.ndim > 255:
        raise TensorFileError("too many dimensions")
    if any(d >= 2**32 for d in a.shape):
        raise TensorFileError("dimension exceeds u32")
    head = _HEAD.pack(MAGIC, VERSION, _CODES[a.dtype], a.ndim)
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return head + dims + a.tobytes(order="C")


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < _HEAD.size:
        raise TensorFileError("truncated header")
    magic, version, code, ndim = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise TensorFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}")
    if code not in DTYPES:
        raise TensorFileError(f"unknown dtype code {code}")
    off = _HEAD.size + 4 * ndim
    if len(data) < off:
        raise TensorFileError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", data, _HEAD.size)
    dtype = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - off != count * dtype.itemsize:
        raise TensorFileError(
            f"payload is {len(data) - off} bytes, expected {count * dtype.itemsize}"
        )
    return np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def write_tensor(path: str | Path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
