"""Layers, blocks, transitions and skip fusion."""

from .module import BatchNorm2d, Conv2d, ConvNorm, DepthwiseConv2d, Linear, Module, Sequence
from .attention import QKV, attention, relative_index
from .blocks import (
    FFN,
    MHSA,
    GlobalLocalBlock,
    LocalBlock,
    Stem,
    global_local_block_forward,
    local_block_forward,
    mhsa_forward,
    set_layer_scales,
    stem_forward,
)
from .resample import (
    AttnResample,
    ConvDownsample,
    ConvUpsample,
    PredictionHead,
    attn_downsample,
    attn_resample,
    attn_upsample,
    conv_downsample,
    conv_upsample,
    prediction_head,
)
from .skip import SkipFusion, channel_attention_gate, gate_logits, skip_fuse

__all__ = [
    "BatchNorm2d", "Conv2d", "ConvNorm", "DepthwiseConv2d", "Linear", "Module", "Sequence",
    "QKV", "attention", "relative_index",
    "FFN", "MHSA", "GlobalLocalBlock", "LocalBlock", "Stem", "global_local_block_forward",
    "local_block_forward", "mhsa_forward", "set_layer_scales", "stem_forward",
    "AttnResample", "ConvDownsample", "ConvUpsample", "PredictionHead", "attn_downsample",
    "attn_resample", "attn_upsample", "conv_downsample", "conv_upsample", "prediction_head",
    "SkipFusion", "channel_attention_gate", "gate_logits", "skip_fuse",
]
