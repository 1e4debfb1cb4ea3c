"""Binary PGM (P5) files for label masks.

The maxval is ``num_classes - 1`` so the file states its own label range.
Samples are one byte when maxval < 256, else two bytes big-endian.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from .errors import CorruptFile, InvalidArg, LabelOutOfRange


def encode_pgm(mask: np.ndarray, maxval: int) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidArg(f"PGM needs a 2-D mask, got shape {mask.shape}")
    if not 1 <= maxval < 65536:
        raise InvalidArg(f"PGM maxval must be in [1, 65535], got {maxval}")
    if mask.size and (mask.min() < 0 or mask.max() > maxval):
        raise LabelOutOfRange(f"mask values must lie in [0, {maxval}]")
    H, W = mask.shape
    header = f"P5\n{W} {H}\n{maxval}\n".encode("ascii")
    dtype = ">u1" if maxval < 256 else ">u2"
    return header + mask.astype(dtype).tobytes()


def decode_pgm(data: bytes) -> tuple:
    """Return ``(mask int64 [H, W], maxval)``."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFile("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise CorruptFile(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        W, H, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise CorruptFile(f"bad PGM header: {exc}") from None
    pos += 1  # single whitespace after maxval
    width = 1 if maxval < 256 else 2
    body = data[pos:pos + H * W * width]
    if len(body) != H * W * width:
        raise CorruptFile(f"PGM body holds {len(body)} bytes, expected {H * W * width}")
    mask = np.frombuffer(body, dtype=">u1" if width == 1 else ">u2").reshape(H, W)
    return mask.astype(np.int64), maxval


def save_pgm(path: Union[str, Path], mask: np.ndarray, maxval: int) -> None:
    Path(path).write_bytes(encode_pgm(mask, maxval))


def load_pgm(path: Union[str, Path]) -> tuple:
    return decode_pgm(Path(path).read_bytes())
