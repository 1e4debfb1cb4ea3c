"""Full U-shaped network: stem, four encoder stages, mirrored decoder, gated skips, head.

Data flow (stage resolutions are H/4 .. H/32)::

    stem -> enc1 -> conv down -> enc2 -> attn down -> enc3 -> attn down -> enc4 (bottleneck)
    enc4 -> attn up + skip3 -> dec3 -> attn up + skip2 -> dec2 -> conv up + skip1 -> dec1 -> head

Stages 1-2 use local blocks, stages 3-4 global+local blocks. The deepest
encoder stage doubles as the bottleneck, so the decoder has stages 1-3.
"""

from __future__ import annotations

import numpy as np

from .config import EViTUNetConfig
from .core.tensor import Tensor
from .errors import ShapeMismatch
from .nn.blocks import GlobalLocalBlock, LocalBlock, Stem
from .nn.module import Module
from .nn.resample import AttnResample, ConvDownsample, ConvUpsample, PredictionHead
from .nn.skip import SkipFusion


def _stage(cfg: EViTUNetConfig, stage: int, rng, dtype) -> "Stage":
    width = cfg.stage_widths[stage - 1]
    blocks = []
    for _ in range(cfg.stage_depths[stage - 1]):
        if stage <= 2:
            blocks.append(LocalBlock(width, cfg.expansion, rng, dtype))
        else:
            blocks.append(GlobalLocalBlock(width, cfg.expansion, cfg.heads[stage - 3], cfg.head_dim,
                                           cfg.stage_resolution(stage), rng, dtype, cfg.attn_scale))
    return Stage(blocks)


class Stage(Module):
    """Blocks applied in order; children are named b0, b1, ..."""

    def __init__(self, blocks):
        super().__init__()
        for i, block in enumerate(blocks):
            setattr(self, f"b{i}", block)
        self.blocks = list(blocks)

    def forward(self, x, mode="train"):
        for block in self.blocks:
            x = block(x, mode)
        return x


class Stages(Module):
    """Modules keyed by stage number, named s1, s2, ..."""

    def __init__(self, items: dict):
        super().__init__()
        for stage, module in items.items():
            setattr(self, f"s{stage}", module)

    def __getitem__(self, stage: int) -> Module:
        return getattr(self, f"s{stage}")


class EViTUNet(Module):
    def __init__(self, config: EViTUNetConfig, dtype=np.float32):
        super().__init__()
        config.validate()
        object.__setattr__(self, "config", config)
        object.__setattr__(self, "dtype", np.dtype(dtype))
        rng = np.random.default_rng(config.seed)
        w = config.stage_widths
        h = config.heads
        res = config.stage_resolution
        attn = dict(attn_scale=config.attn_scale, softmax=config.resample_softmax)

        self.stem = Stem(w[0], rng, dtype)
        self.enc = Stages({s: _stage(config, s, rng, dtype) for s in range(1, 5)})
        self.down = Stages({
            1: ConvDownsample(w[0], w[1], rng, dtype),
            2: AttnResample(w[1], w[2], h[0], config.head_dim, res(2), 0.5, rng, dtype, **attn),
            3: AttnResample(w[2], w[3], h[1], config.head_dim, res(3), 0.5, rng, dtype, **attn),
        })
        self.up = Stages({
            4: AttnResample(w[3], w[2], h[1], config.head_dim, res(4), 2, rng, dtype, **attn),
            3: AttnResample(w[2], w[1], h[0], config.head_dim, res(3), 2, rng, dtype, **attn),
            2: ConvUpsample(w[1], w[0], rng, dtype),
        })
        self.skip = Stages({s: SkipFusion(w[s - 1], rng, dtype) for s in (3, 2, 1)})
        self.dec = Stages({s: _stage(config, s, rng, dtype) for s in (3, 2, 1)})
        self.head = PredictionHead(w[0], config.num_classes, rng, dtype)

    def forward(self, img: Tensor, mode: str = "train", return_features: bool = False):
        return forward(self, img, mode, return_features)


def build(config: EViTUNetConfig, dtype=np.float32) -> EViTUNet:
    """Construct and initialize a model; deterministic in ``config.seed``."""
    return EViTUNet(config, dtype)


def forward(model: EViTUNet, img: Tensor, mode: str = "train", return_features: bool = False):
    """Logits [B, num_classes, H, W]; optionally also per-stage feature maps."""
    cfg = model.config
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeMismatch(f"model input must be [B,3,H,W], got {img.shape}")
    if tuple(img.shape[2:]) != cfg.input_hw:
        raise ShapeMismatch(f"model built for {cfg.input_hw[0]}x{cfg.input_hw[1]}, input is "
                            f"{img.shape[2]}x{img.shape[3]}")
    feats = {}

    def stage(name, fn, *args):
        try:
            out = fn(*args)
        except ShapeMismatch as exc:
            raise type(exc)(f"{name}: {exc}") from exc
        feats[name] = out
        return out

    x = stage("stem", model.stem, img, mode)
    x = stage("enc1", model.enc[1], x, mode)
    x = stage("down1", model.down[1], x, mode)
    x = stage("enc2", model.enc[2], x, mode)
    x = stage("down2", model.down[2], x, mode)
    x = stage("enc3", model.enc[3], x, mode)
    x = stage("down3", model.down[3], x, mode)
    x = stage("enc4", model.enc[4], x, mode)
    feats["dec4"] = x

    for s in (3, 2, 1):
        x = stage(f"up{s + 1}", model.up[s + 1], x, mode)
        x = stage(f"skip{s}", model.skip[s], x, feats[f"enc{s}"], mode)
        x = stage(f"dec{s}", model.dec[s], x, mode)
    logits = stage("head", model.head, x, mode)
    return (logits, feats) if return_features else logits
