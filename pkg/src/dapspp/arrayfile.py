"""DPX1 binary array files.

Layout: the 4-byte magic ``DPX1``, one dtype byte (0 = float64), one rank
byte, ``rank`` little-endian uint32 extents, then the row-major little-endian
float64 payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DPX1"
DTYPE_F64 = 0


def encode(array) -> bytes:
    a = np.asarray(array, dtype="<f8")
    if a.ndim > 255:
        raise ValueError("rank above 255 cannot be encoded")
    if any(s >= 2**32 for s in a.shape):
        raise ValueError("extent does not fit in uint32")
    header = MAGIC + struct.pack("<BB", DTYPE_F64, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).tobytes(order="C")


def decode(data: bytes) -> np.ndarray:
    if len(data) < 6 or data[:4] != MAGIC:
        raise ValueError("not a DPX1 file (bad magic)")
    dtype, rank = struct.unpack_from("<BB", data, 4)
    if dtype != DTYPE_F64:
        raise ValueError(f"unsupported dtype tag {dtype}")
    offset = 6 + 4 * rank
    if len(data) < offset:
        raise ValueError("truncated DPX1 header")
    shape = struct.unpack_from(f"<{rank}I", data, 6)
    n = int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != 8 * n:
        raise ValueError(f"payload has {len(data) - offset} bytes, expected {8 * n}")
    return np.frombuffer(data, dtype="<f8", offset=offset).reshape(shape).astype(float)


def write_array(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
