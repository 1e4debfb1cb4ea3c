"""EVT1 single-tensor binary encoding.

Layout: ``b"EVT1"``, u8 dtype code (0 = f32, 1 = f64), u8 rank, ``rank`` u64
little-endian extents, then the scalars row-major in little-endian order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import CorruptFile

MAGIC = b"EVT1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode(arr) -> bytes:
    from .tensor import Tensor

    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise CorruptFile(f"EVT1 stores only f32/f64, got {arr.dtype}")
    code = _CODES[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_from(buf: bytes, offset: int = 0):
    """Decode one tensor starting at ``offset``; returns (array, next_offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise CorruptFile("bad EVT1 magic")
    if len(buf) < offset + 6:
        raise CorruptFile("truncated EVT1 header")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _DTYPES:
        raise CorruptFile(f"unknown EVT1 dtype code {code}")
    pos = offset + 6
    if len(buf) < pos + 8 * rank:
        raise CorruptFile("truncated EVT1 extents")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    nbytes = count * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise CorruptFile("truncated EVT1 payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def decode(buf: bytes) -> np.ndarray:
    arr, end = decode_from(buf, 0)
    if end != len(buf):
        raise CorruptFile(f"{len(buf) - end} trailing bytes after EVT1 tensor")
    return arr


def save(path: Union[str, Path], arr) -> None:
    Path(path).write_bytes(encode(arr))


def load(path: Union[str, Path]) -> np.ndarray:
    return decode(Path(path).read_bytes())
