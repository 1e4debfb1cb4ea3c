"""Stage transitions and the prediction head.

High-resolution transitions are convolutional. Low-resolution transitions
attend from a resized query grid onto the full-resolution key/value tokens,
so the output token count is the query count: a quarter of the input for
downsampling (half per spatial axis) and four times it for upsampling.
"""

from __future__ import annotations

from ..core import ops
from ..core.tensor import Tensor
from ..errors import BiasExtentMismatch, InvalidArg, ShapeMismatch
from .attention import QKV, attention, bias_table_size, from_tokens, relative_index, to_tokens
from .module import Conv2d, ConvNorm, Module, zeros


def _check_input(x: Tensor, channels: int, name: str):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeMismatch(f"{name} expects [B,{channels},h,w], got {x.shape}")


class ConvDownsample(Module):
    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.in_channels = cin
        self.conv = ConvNorm(cin, cout, 3, rng, dtype, stride=2, pad=1)

    def forward(self, x, mode="train"):
        return conv_downsample(x, self, mode)


def conv_downsample(x: Tensor, p: ConvDownsample, mode="train") -> Tensor:
    _check_input(x, p.in_channels, "conv_downsample")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise InvalidArg(f"conv_downsample needs even extents, got {x.shape[2:]}")
    return p.conv(x, mode)


class ConvUpsample(Module):
    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.in_channels = cin
        self.conv = ConvNorm(cin, cout, 1, rng, dtype)

    def forward(self, x, mode="train"):
        return conv_upsample(x, self, mode)


def conv_upsample(x: Tensor, p: ConvUpsample, mode="train") -> Tensor:
    """Bilinear 2x, then 1x1 conv + norm."""
    _check_input(x, p.in_channels, "conv_upsample")
    return p.conv(ops.bilinear_upsample(x, 2), mode)


class AttnResample(Module):
    """Attention resampler; ``factor`` is 0.5 (down) or 2 (up) per spatial axis.

    Queries come from a 2x2-average-pooled (down) or nearest-duplicated (up)
    copy of the input, projected by a 1x1 conv. Duplicating after the
    projection is equivalent to duplicating before it and 4x cheaper, so the
    up path projects at input resolution first.
    """

    def __init__(self, cin, cout, heads, head_dim, in_resolution, factor, rng, dtype,
                 attn_scale=True, softmax=True):
        super().__init__()
        if factor not in (0.5, 2):
            raise InvalidArg(f"resampling factor must be 1/2 or 2, got {factor}")
        h, w = in_resolution
        if factor == 0.5 and (h % 2 or w % 2):
            raise InvalidArg(f"attn_downsample needs even extents, got {h}x{w}")
        self.in_channels, self.out_channels = cin, cout
        self.heads, self.head_dim = heads, head_dim
        self.factor = factor
        self.in_resolution = (h, w)
        self.out_resolution = (h // 2, w // 2) if factor == 0.5 else (2 * h, 2 * w)
        self.attn_scale, self.softmax = attn_scale, softmax
        inner = heads * head_dim
        self.qkv = QKV(cin, inner, rng, dtype, softmax=softmax)
        self.proj = ConvNorm(inner, cout, 1, rng, dtype)
        self.attention_bias = zeros((heads, bias_table_size(self.in_resolution)), dtype)
        self.bias_index = relative_index(self.out_resolution, self.in_resolution)

    def forward(self, x, mode="train"):
        return attn_resample(x, self, mode)


def attn_resample(x: Tensor, p: AttnResample, mode="train", return_weights=False):
    _check_input(x, p.in_channels, "attention resampler")
    hw = tuple(x.shape[2:])
    if p.factor == 0.5 and (hw[0] % 2 or hw[1] % 2):
        raise InvalidArg(f"attn_downsample needs even extents, got {hw}")
    if hw != p.in_resolution:
        raise BiasExtentMismatch(f"attention bias built for {p.in_resolution}, input is {hw}")
    if p.factor == 0.5:
        q = p.qkv.q(ops.avg_pool2x(x), mode)
    else:
        q = ops.nearest_upsample(p.qkv.q(x, mode), 2)
    qt = to_tokens(q, p.heads)
    kt = to_tokens(p.qkv.k(x, mode), p.heads)
    vt = to_tokens(p.qkv.v(x, mode), p.heads)
    bias = ops.gather_bias(p.attention_bias, p.bias_index)
    out, weights = attention(qt, kt, vt, bias, scale=p.attn_scale, softmax=p.softmax)
    y = p.proj(from_tokens(out, p.out_resolution), mode)
    return (y, weights) if return_weights else y


def attn_downsample(x: Tensor, p: AttnResample, mode="train") -> Tensor:
    if p.factor != 0.5:
        raise InvalidArg("attn_downsample called with an upsampling resampler")
    return attn_resample(x, p, mode)


def attn_upsample(x: Tensor, p: AttnResample, mode="train") -> Tensor:
    if p.factor != 2:
        raise InvalidArg("attn_upsample called with a downsampling resampler")
    return attn_resample(x, p, mode)


class PredictionHead(Module):
    def __init__(self, cin, num_classes, rng, dtype):
        super().__init__()
        self.in_channels = cin
        self.num_classes = num_classes
        self.classifier = Conv2d(cin, num_classes, 1, rng, dtype)

    def forward(self, x, mode="train"):
        return prediction_head(x, self)


def prediction_head(x: Tensor, p: PredictionHead) -> Tensor:
    """Bilinear 4x, then 1x1 conv to class logits."""
    _check_input(x, p.in_channels, "prediction_head")
    return p.classifier(ops.bilinear_upsample(x, 4))
