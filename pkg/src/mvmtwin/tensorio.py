"""Reader/writer for the ``.ten`` binary tensor format.

Layout (little-endian)::

    b"MVMTEN01"            8-byte magic
    u8   dtype code        1 = float32, 2 = uint8
    u8   ndim
    u32  dims[ndim]
    ...  row-major payload
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVMTEN01"

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype("float32"): 1, np.dtype("uint8"): 2}


class TensorFormatError(ValueError):
    """Raised when a tensor file is malformed."""


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    try:
        code = _DTYPE_TO_CODE[array.dtype.newbyteorder("=")]
    except KeyError:
        raise TypeError(f"unsupported dtype {array.dtype}; use float32 or uint8") from None
    if array.ndim > 255:
        raise ValueError("too many dimensions")
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_CODE_TO_DTYPE[code]).tobytes(order="C")
    return header + payload


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 10 or data[:8] != MAGIC:
        raise TensorFormatError("bad magic")
    code, ndim = struct.unpack_from("<BB", data, 8)
    if code not in _CODE_TO_DTYPE:
        raise TensorFormatError(f"unknown dtype code {code}")
    offset = 10 + 4 * ndim
    if len(data) < offset:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 10)
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) - offset != expected:
        raise TensorFormatError(
            f"payload size {len(data) - offset} does not match dims {dims}"
        )
    out = np.frombuffer(data, dtype=dtype, offset=offset).reshape(dims)
    return out.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
