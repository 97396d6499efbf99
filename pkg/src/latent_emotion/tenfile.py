"""Reader and writer for the ``.ten`` binary tensor format.

Layout: ``b"TENS"``, version byte ``0x01``, dtype byte ``0x01`` (float32),
one byte ``ndim``, ``ndim`` little-endian uint64 extents, then the
row-major little-endian float32 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TENS"
VERSION = 1
DTYPE_F32 = 1


class TenFormatError(ValueError):
    """Malformed or unsupported ``.ten`` content."""


def dumps(array) -> bytes:
    arr = np.asarray(array, dtype="<f4", order="C")
    if arr.ndim > 255:
        raise TenFormatError(f"too many dimensions: {arr.ndim}")
    header = MAGIC + bytes([VERSION, DTYPE_F32, arr.ndim])
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise TenFormatError("bad magic bytes, not a .ten file")
    version, dtype, ndim = buf[4], buf[5], buf[6]
    if version != VERSION:
        raise TenFormatError(f"unsupported .ten version {version}")
    if dtype != DTYPE_F32:
        raise TenFormatError(f"unsupported dtype code {dtype}")
    end = 7 + 8 * ndim
    if len(buf) < end:
        raise TenFormatError("truncated header")
    shape = struct.unpack(f"<{ndim}Q", buf[7:end])
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) - end != 4 * count:
        raise TenFormatError(f"payload holds {len(buf) - end} bytes, shape {shape} needs {4 * count}")
    return np.frombuffer(buf, dtype="<f4", offset=end).reshape(shape).astype(np.float32)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
