"""Model configuration and the flat ``key=value`` config file format.

Lists are comma separated (``stage_widths=40,80,192,384``), the input size is
``HxW`` (``input_hw=224x224``), booleans are ``on``/``off``. Lines starting
with ``#`` and blank lines are ignored. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

from .errors import ConfigError

_TRUE = {"on", "true", "1", "yes"}
_FALSE = {"off", "false", "0", "no"}


def _parse_bool(text):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _parse_ints(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _parse_hw(text):
    t = text.lower().replace(" ", "")
    sep = "x" if "x" in t else ","
    parts = t.split(sep)
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def _format(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


_PARSERS = {
    "stage_widths": _parse_ints,
    "stage_depths": _parse_ints,
    "heads": _parse_ints,
    "head_dim": int,
    "expansion": int,
    "num_classes": int,
    "input_hw": _parse_hw,
    "attn_scale": _parse_bool,
    "resample_softmax": _parse_bool,
    "seed": int,
}


@dataclass(frozen=True)
class EViTUNetConfig:
    stage_widths: tuple = (40, 80, 192, 384)
    stage_depths: tuple = (5, 5, 15, 10)
    heads: tuple = (4, 8)
    head_dim: int = 32
    expansion: int = 4
    num_classes: int = 9
    input_hw: tuple = (224, 224)
    attn_scale: bool = True
    resample_softmax: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("stage_widths", "stage_depths", "heads", "input_hw"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        w, d = self.stage_widths, self.stage_depths
        if len(w) != 4:
            raise ConfigError(f"stage_widths needs 4 entries, got {len(w)}")
        if any(b <= a for a, b in zip(w, w[1:])):
            raise ConfigError(f"stage_widths must be strictly increasing, got {w}")
        if w[0] % 2 or w[0] < 2:
            raise ConfigError(f"stage_widths[0] must be even (stem halves it), got {w[0]}")
        if len(d) != 4 or any(v < 1 for v in d):
            raise ConfigError(f"stage_depths needs 4 entries >= 1, got {d}")
        if len(self.heads) != 2 or any(v < 1 for v in self.heads):
            raise ConfigError(f"heads needs 2 entries >= 1 (stages 3 and 4), got {self.heads}")
        if self.head_dim < 1:
            raise ConfigError(f"head_dim must be >= 1, got {self.head_dim}")
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        H, W = self.input_hw
        if H % 32 or W % 32 or H < 32 or W < 32:
            raise ConfigError(f"input_hw must be divisible by 32, got {H}x{W}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must fit in u64, got {self.seed}")

    def stage_resolution(self, stage: int) -> tuple:
        """Spatial extents of encoder stage ``stage`` (1-based)."""
        f = 2 ** (stage + 1)
        return self.input_hw[0] // f, self.input_hw[1] // f

    def replace(self, **changes) -> "EViTUNetConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "input_hw":
                lines.append(f"input_hw={value[0]}x{value[1]}")
            else:
                lines.append(f"{f.name}={_format(value)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    @classmethod
    def from_text(cls, text: str) -> "EViTUNetConfig":
        values = parse_key_values(text, _PARSERS)
        return cls._from_values(values)

    @classmethod
    def _from_values(cls, values: dict) -> "EViTUNetConfig":
        try:
            return cls(**{k: v for k, (v, _) in values.items()})
        except ConfigError as exc:
            raise _with_line(exc, values) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "EViTUNetConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


MODEL_PARSERS = _PARSERS


def _with_line(exc: ConfigError, values: dict) -> ConfigError:
    """Attach the line of the key a validation message starts with, if it came from a file."""
    if exc.line is not None:
        return exc
    message = str(exc)
    for key, (_, lineno) in values.items():
        if message.startswith(key):
            return ConfigError(message, line=lineno)
    return exc


def parse_key_values(text: str, parsers: dict) -> dict:
    """Parse ``key=value`` lines into ``{key: (value, line_number)}``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw!r}", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in parsers:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        try:
            values[key] = (parsers[key](value.strip()), lineno)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line=lineno) from exc
    return values


def tiny_config(**overrides) -> EViTUNetConfig:
    """Small config used by gradient checks."""
    base = dict(stage_widths=(8, 16, 24, 32), stage_depths=(1, 1, 1, 1), heads=(2, 2), head_dim=4,
                expansion=2, num_classes=2, input_hw=(32, 32))
    base.update(overrides)
    return EViTUNetConfig(**base)


def toy_config(**overrides) -> EViTUNetConfig:
    """Desk-scale training config: 64x64 inputs, 3 classes."""
    base = dict(stage_widths=(16, 32, 48, 64), stage_depths=(1, 1, 2, 2), heads=(2, 4), head_dim=16,
                expansion=4, num_classes=3, input_hw=(64, 64))
    base.update(overrides)
    return EViTUNetConfig(**base)


_RUN_PARSERS = {
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "epochs": int,
    "batch_size": int,
    "dataset_size": int,
    "dataset_seed": int,
    "shuffle_seed": int,
    "ce_weight": float,
    "dice_weight": float,
}


@dataclass(frozen=True)
class RunConfig:
    """A model config plus the training keys; every key has a default.

    Defaults: lr 0.05, momentum 0.9, weight_decay 1e-4, epochs 20,
    batch_size 8, dataset_size 256, dataset_seed 0, shuffle_seed 0,
    ce_weight 0.5, dice_weight 0.5.
    """

    model: EViTUNetConfig = EViTUNetConfig()
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 8
    dataset_size: int = 256
    dataset_seed: int = 0
    shuffle_seed: int = 0
    ce_weight: float = 0.5
    dice_weight: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dataset_size < 5:
            raise ConfigError(f"dataset_size must be >= 5 (one held-out sample), got {self.dataset_size}")
        for name in ("dataset_seed", "shuffle_seed"):
            if not 0 <= getattr(self, name) < 2 ** 64:
                raise ConfigError(f"{name} must fit in u64, got {getattr(self, name)}")
        if self.ce_weight < 0 or self.dice_weight < 0:
            raise ConfigError(f"ce_weight and dice_weight must be >= 0, got {self.ce_weight}, {self.dice_weight}")
        if self.ce_weight + self.dice_weight == 0:
            raise ConfigError("ce_weight and dice_weight cannot both be 0")

    def to_text(self) -> str:
        lines = [self.model.to_text().rstrip("\n")]
        for name in _RUN_PARSERS:
            lines.append(f"{name}={_format(getattr(self, name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = parse_key_values(text, {**_PARSERS, **_RUN_PARSERS})
        model_values = {k: v for k, v in values.items() if k in _PARSERS}
        run_values = {k: v for k, (v, _) in values.items() if k in _RUN_PARSERS}
        model = EViTUNetConfig._from_values(model_values)
        try:
            return cls(model=model, **run_values)
        except ConfigError as exc:
            raise _with_line(exc, values) from None

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))
