"""Channel-attention skip connection between mirror encoder/decoder stages."""

from __future__ import annotations

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ShapeMismatch
from .module import ConvNorm, Linear, Module


class SkipFusion(Module):
    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.channels = channels
        self.mlp_x = Linear(channels, channels, rng, dtype)
        self.mlp_g = Linear(channels, channels, rng, dtype)
        self.fuse = ConvNorm(2 * channels, channels, 1, rng, dtype)

    def forward(self, x_dec, g_enc, mode="train"):
        return skip_fuse(x_dec, g_enc, self, mode)


def _check_pair(x: Tensor, g: Tensor, channels: int):
    if x.shape != g.shape:
        raise ShapeMismatch(f"skip inputs differ: decoder {x.shape} vs encoder {g.shape}")
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeMismatch(f"skip expects [B,{channels},h,w], got {x.shape}")


def gate_logits(x: Tensor, g: Tensor, p: SkipFusion) -> Tensor:
    """Mean of the two pooled-descriptor MLPs, shape [B, C]."""
    return ops.mul(ops.add(p.mlp_x(ops.global_avg_pool(x)), p.mlp_g(ops.global_avg_pool(g))), 0.5)


def channel_attention_gate(x: Tensor, g: Tensor, p: SkipFusion) -> Tensor:
    """ReLU(x * sigmoid(att)), the gate broadcast over each sample's channels.

    ``x`` is the decoder feature, ``g`` the encoder skip feature.
    """
    _check_pair(x, g, p.channels)
    B, C = x.shape[:2]
    gate = ops.sigmoid(gate_logits(x, g, p))
    return ops.relu(ops.mul(x, ops.reshape(gate, (B, C, 1, 1))))


def skip_fuse(x_dec: Tensor, g_enc: Tensor, p: SkipFusion, mode="train") -> Tensor:
    gated = channel_attention_gate(x_dec, g_enc, p)
    return p.fuse(ops.concat([gated, g_enc], axis=1), mode)
