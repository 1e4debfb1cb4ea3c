"""Encoder/decoder units: the local DW-conv FFN block, the MHSA block, and the stem."""

from __future__ import annotations

from ..core import ops
from ..core.tensor import Tensor
from ..errors import BiasExtentMismatch, InvalidArg, ShapeMismatch
from .attention import QKV, attention, bias_table_size, from_tokens, relative_index, to_tokens
from .module import ConvNorm, Module, full, zeros

LAYER_SCALE_INIT = 1e-5


class FFN(Module):
    """1x1 expand -> 3x3 depthwise -> 1x1 project, each conv batch-normed."""

    def __init__(self, channels, expansion, rng, dtype):
        super().__init__()
        hidden = channels * expansion
        self.expand = ConvNorm(channels, hidden, 1, rng, dtype, act=True)
        self.dw = ConvNorm(hidden, hidden, 3, rng, dtype, pad=1, act=True, depthwise=True)
        self.project = ConvNorm(hidden, channels, 1, rng, dtype)

    def forward(self, x, mode="train"):
        return self.project(self.dw(self.expand(x, mode), mode), mode)


class LocalBlock(Module):
    def __init__(self, channels, expansion, rng, dtype):
        super().__init__()
        self.channels = channels
        self.ffn = FFN(channels, expansion, rng, dtype)
        self.layer_scale = full((channels,), LAYER_SCALE_INIT, dtype)

    def forward(self, x, mode="train"):
        return local_block_forward(x, self, mode)


def local_block_forward(x: Tensor, p: LocalBlock, mode="train") -> Tensor:
    """x + S * FFN(x)."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeMismatch(f"local block expects [B,{p.channels},h,w], got {x.shape}")
    return ops.add(x, ops.scale_channels(p.ffn(x, mode), p.layer_scale))


class MHSA(Module):
    """Multi-head self-attention over a fixed h x w token grid."""

    def __init__(self, channels, heads, head_dim, resolution, rng, dtype, attn_scale=True):
        super().__init__()
        self.channels, self.heads, self.head_dim = channels, heads, head_dim
        self.resolution = tuple(resolution)
        self.attn_scale = attn_scale
        inner = heads * head_dim
        self.qkv = QKV(channels, inner, rng, dtype)
        self.proj = ConvNorm(inner, channels, 1, rng, dtype)
        self.attention_bias = zeros((heads, bias_table_size(self.resolution)), dtype)
        self.bias_index = relative_index(self.resolution, self.resolution)

    def forward(self, x, mode="train"):
        return mhsa_forward(x, self, mode)


def mhsa_forward(x: Tensor, p: MHSA, mode="train", return_weights=False):
    """Project to Q, K, V, attend per head with the offset bias, project back to C."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeMismatch(f"MHSA expects [B,{p.channels},h,w], got {x.shape}")
    hw = tuple(x.shape[2:])
    if hw != p.resolution:
        raise BiasExtentMismatch(f"attention bias built for {p.resolution}, input is {hw}")
    q = to_tokens(p.qkv.q(x, mode), p.heads)
    k = to_tokens(p.qkv.k(x, mode), p.heads)
    v = to_tokens(p.qkv.v(x, mode), p.heads)
    bias = ops.gather_bias(p.attention_bias, p.bias_index)
    out, weights = attention(q, k, v, bias, scale=p.attn_scale)
    y = p.proj(from_tokens(out, hw), mode)
    return (y, weights) if return_weights else y


class GlobalLocalBlock(Module):
    def __init__(self, channels, expansion, heads, head_dim, resolution, rng, dtype, attn_scale=True):
        super().__init__()
        self.channels = channels
        self.mhsa = MHSA(channels, heads, head_dim, resolution, rng, dtype, attn_scale)
        self.attn_layer_scale = full((channels,), LAYER_SCALE_INIT, dtype)
        self.local = LocalBlock(channels, expansion, rng, dtype)

    def forward(self, x, mode="train"):
        return global_local_block_forward(x, self, mode)


def global_local_block_forward(x: Tensor, p: GlobalLocalBlock, mode="train") -> Tensor:
    """Attention residual first, then the FFN residual of the embedded local block."""
    y = ops.add(x, ops.scale_channels(mhsa_forward(x, p.mhsa, mode), p.attn_layer_scale))
    return local_block_forward(y, p.local, mode)


class Stem(Module):
    """Two 3x3 stride-2 conv-norm-GELU layers: 3 -> C/2 -> C at 1/4 resolution."""

    def __init__(self, out_channels, rng, dtype, in_channels=3):
        super().__init__()
        if out_channels % 2:
            raise InvalidArg(f"stem width must be even, got {out_channels}")
        self.in_channels = in_channels
        self.conv1 = ConvNorm(in_channels, out_channels // 2, 3, rng, dtype, stride=2, pad=1, act=True)
        self.conv2 = ConvNorm(out_channels // 2, out_channels, 3, rng, dtype, stride=2, pad=1, act=True)

    def forward(self, img, mode="train"):
        return stem_forward(img, self, mode)


def stem_forward(img: Tensor, p: Stem, mode="train") -> Tensor:
    if img.ndim != 4 or img.shape[1] != p.in_channels:
        raise ShapeMismatch(f"stem expects [B,{p.in_channels},H,W], got {img.shape}")
    H, W = img.shape[2:]
    if H % 4 or W % 4:
        raise InvalidArg(f"stem input extents must be divisible by 4, got {H}x{W}")
    return p.conv2(p.conv1(img, mode), mode)


def set_layer_scales(module: Module, value: float) -> None:
    """Overwrite every residual layer scale under ``module`` (ablations, tests)."""
    for name, prm in module.named_parameters():
        if name.endswith("layer_scale"):
            prm.data[...] = value


def layer_scale_names(module: Module) -> list:
    return [n for n, _ in module.named_parameters() if n.endswith("layer_scale")]


__all__ = [
    "FFN",
    "LocalBlock",
    "MHSA",
    "GlobalLocalBlock",
    "Stem",
    "local_block_forward",
    "mhsa_forward",
    "global_local_block_forward",
    "stem_forward",
    "set_layer_scales",
]
