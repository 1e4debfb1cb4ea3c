"""Checkpoint container.

Layout (all integers little-endian)::

    b"EVTC"                 magic
    u32                     format version
    32 bytes                sha256 of the config text
    u32 + bytes             config text (UTF-8, ``key=value`` lines)
    u32 + bytes             manifest (UTF-8 JSON list of entries)
    payload                 concatenated EVT1 tensors

Each manifest entry is ``{"name", "kind", "dtype", "shape", "offset", "nbytes"}``
with ``offset`` relative to the start of the payload and ``kind`` either
``"param"`` (trainable) or ``"buffer"`` (batch-norm running statistics).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import EViTUNetConfig
from .core import container
from .core.tensor import DTYPES
from .errors import ConfigError, ConfigMismatch, CorruptFile
from .model import EViTUNet, build

MAGIC = b"EVTC"
VERSION = 1


def _entries(model: EViTUNet):
    for name, p in model.named_parameters():
        yield name, "param", p.data
    for name, b in model.named_buffers():
        yield name, "buffer", b


def encode_checkpoint(model: EViTUNet) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, kind, arr in _entries(model):
        blob = container.encode(arr)
        manifest.append({"name": name, "kind": kind, "dtype": DTYPES[arr.dtype], "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    cfg_text = model.config.to_text().encode("utf-8")
    man = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    head = (MAGIC + struct.pack("<I", VERSION) + model.config.digest()
            + struct.pack("<I", len(cfg_text)) + cfg_text + struct.pack("<I", len(man)) + man)
    return head + b"".join(blobs)


def save_checkpoint(model: EViTUNet, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def read_header(buf: bytes):
    """Returns (config, manifest, payload_start) after validating magic and digest."""
    if buf[:4] != MAGIC:
        raise CorruptFile("bad checkpoint magic")
    try:
        (version,) = struct.unpack_from("<I", buf, 4)
        digest = buf[8:40]
        (n_cfg,) = struct.unpack_from("<I", buf, 40)
        cfg_text = buf[44:44 + n_cfg].decode("utf-8")
        pos = 44 + n_cfg
        (n_man,) = struct.unpack_from("<I", buf, pos)
        manifest = json.loads(buf[pos + 4:pos + 4 + n_man].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable checkpoint header: {exc}") from exc
    if version != VERSION:
        raise CorruptFile(f"unsupported checkpoint version {version}")
    if hashlib.sha256(cfg_text.encode("utf-8")).digest() != digest:
        raise CorruptFile("config digest does not match stored config")
    try:
        config = EViTUNetConfig.from_text(cfg_text)
    except ConfigError as exc:
        raise CorruptFile(f"stored config invalid: {exc}") from exc
    return config, manifest, pos + 4 + n_man


def load_checkpoint(path: Union[str, Path], config: Optional[EViTUNetConfig] = None) -> EViTUNet:
    """Rebuild a model from ``path``; ``config``, if given, must match the stored one."""
    buf = Path(path).read_bytes()
    stored, manifest, start = read_header(buf)
    if config is not None and config.digest() != stored.digest():
        raise ConfigMismatch(f"checkpoint config differs from requested config:\n"
                             f"stored:\n{stored.to_text()}requested:\n{config.to_text()}")
    dtypes = {e["dtype"] for e in manifest}
    if len(dtypes) > 1:
        raise CorruptFile(f"mixed parameter dtypes {sorted(dtypes)}")
    dtype = np.float64 if dtypes == {"f64"} else np.float32
    model = build(stored, dtype)
    targets = {name: ("param", p.data) for name, p in model.named_parameters()}
    targets.update({name: ("buffer", b) for name, b in model.named_buffers()})
    if {e["name"] for e in manifest} != set(targets):
        raise CorruptFile("checkpoint manifest does not match the model's parameter set")
    for e in manifest:
        kind, dest = targets[e["name"]]
        arr, end = container.decode_from(buf, start + e["offset"])
        if end - (start + e["offset"]) != e["nbytes"] or kind != e["kind"]:
            raise CorruptFile(f"manifest entry for {e['name']} is inconsistent")
        if arr.shape != dest.shape:
            raise CorruptFile(f"{e['name']}: stored shape {arr.shape}, model expects {dest.shape}")
        dest[...] = arr
    return model


def param_scalar_count(path: Union[str, Path]) -> int:
    """Trainable scalars stored in a checkpoint (buffers excluded)."""
    _, manifest, _ = read_header(Path(path).read_bytes())
    return int(sum(int(np.prod(e["shape"], dtype=np.int64)) for e in manifest if e["kind"] == "param"))
