"""Reader/writer for the SKFT tensor container.

Layout (all little-endian)::

    bytes 0-3   b"SKFT"
    u32         version (1)
    u32         dtype code (1 = float64)
    u32         ndim
    ndim * u64  dims
    payload     float64, row-major (last dimension fastest)
"""

from __future__ import annotations

import os
import struct

import numpy as np

from skild.errors import ValidationError

MAGIC = b"SKFT"
VERSION = 1
DTYPE_F64 = 1


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<III", VERSION, DTYPE_F64, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != MAGIC:
        raise ValidationError("not an SKFT tensor (bad magic)")
    version, dtype, ndim = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported SKFT version {version}")
    if dtype != DTYPE_F64:
        raise ValidationError(f"unsupported SKFT dtype code {dtype}")
    off = 16
    if len(data) < off + 8 * ndim:
        raise ValidationError("truncated SKFT header")
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(data) != off + 8 * count:
        raise ValidationError(
            f"SKFT payload size mismatch: expected {8 * count} bytes, found {len(data) - off}"
        )
    return np.frombuffer(data, dtype="<f8", offset=off, count=count).reshape(dims).astype(np.float64)


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
