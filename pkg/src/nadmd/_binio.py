"""Dimension-prefixed little-endian float64 array files.

Each array is written as ``uint64 ndim``, ``ndim`` x ``uint64`` extents and
then the C-ordered ``<f8`` payload. A file holds any number of arrays back to
back.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import StoreFormatError


def pack_arrays(arrays) -> bytes:
    chunks = []
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        chunks.append(struct.pack("<Q", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(a.tobytes(order="C"))
    return b"".join(chunks)


def unpack_arrays(data: bytes) -> list[np.ndarray]:
    out, pos = [], 0
    while pos < len(data):
        try:
            (ndim,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if ndim > 8:
                raise StoreFormatError(f"implausible array rank {ndim}")
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
        except struct.error:
            raise StoreFormatError("truncated array header") from None
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise StoreFormatError("truncated array payload")
        out.append(np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos)
                   .reshape(shape).astype(float))
        pos += nbytes
    return out


def write_arrays(path: Path, arrays) -> str:
    """Write arrays to ``path`` and return the SHA-256 of the bytes."""
    data = pack_arrays(arrays)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
