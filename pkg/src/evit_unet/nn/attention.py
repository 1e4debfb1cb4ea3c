"""Scaled dot-product attention with a learnable relative-offset bias."""

from __future__ import annotations

import math

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from .module import ConvNorm, Module


def bias_table_size(key_hw) -> int:
    hk, wk = key_hw
    return (2 * hk - 1) * (2 * wk - 1)


def relative_index(query_hw, key_hw) -> np.ndarray:
    """[Nq, Nk] integer index into a ``(2hk-1)(2wk-1)`` offset table.

    Query positions are first mapped onto the key grid (``i * hk // hq``), so
    a stride-2 query grid lands on every other key row and a 2x query grid
    lands twice on each key row. The signed offset (query - key) then selects
    a table entry, identical offsets sharing one learnable value.
    """
    hq, wq = query_hw
    hk, wk = key_hw
    qi = (np.arange(hq) * hk) // hq
    qj = (np.arange(wq) * wk) // wq
    qr = np.repeat(qi, wq)
    qc = np.tile(qj, hq)
    kr = np.repeat(np.arange(hk), wk)
    kc = np.tile(np.arange(wk), hk)
    dr = qr[:, None] - kr[None, :] + (hk - 1)
    dc = qc[:, None] - kc[None, :] + (wk - 1)
    return (dr * (2 * wk - 1) + dc).astype(np.int64)


def to_tokens(x: Tensor, heads: int) -> Tensor:
    """[B, heads*d, h, w] -> [B, heads, h*w, d]."""
    B, C, h, w = x.shape
    d = C // heads
    return ops.transpose(ops.reshape(x, (B, heads, d, h * w)), (0, 1, 3, 2))


def from_tokens(t: Tensor, hw) -> Tensor:
    """[B, heads, h*w, d] -> [B, heads*d, h, w]."""
    B, H, N, d = t.shape
    return ops.reshape(ops.transpose(t, (0, 1, 3, 2)), (B, H * d, hw[0], hw[1]))


def attention(q: Tensor, k: Tensor, v: Tensor, bias=None, scale: bool = True, softmax: bool = True):
    """Per-head ``softmax(q kᵀ / sqrt(d) + bias) v``.

    q: [B,H,Nq,d], k: [B,H,Nk,d], v: [B,H,Nk,dv], bias: [H,Nq,Nk] or None.
    Returns (output [B,H,Nq,dv], weights [B,H,Nq,Nk]). With ``softmax=False``
    the (scaled, biased) logits are used as weights directly.
    """
    logits = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2)))
    if scale:
        logits = ops.mul(logits, 1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        logits = ops.add(logits, ops.reshape(bias, (1,) + tuple(bias.shape)))
    weights = ops.softmax_lastdim(logits) if softmax else logits
    return ops.matmul(weights, v), weights


class QKV(Module):
    """1x1 conv + norm projections to queries, keys and values.

    Together the three convs form one ``C -> 3 * heads * d`` projection. Under
    softmax the K and V norms carry no shift: a per-channel K shift adds ``q . b``
    to a whole row of logits, which softmax ignores, and since rows sum to one a
    V shift passes straight through to a constant the normed output projection
    removes again.
    """

    def __init__(self, channels, inner, rng, dtype, softmax=True):
        super().__init__()
        self.q = ConvNorm(channels, inner, 1, rng, dtype)
        self.k = ConvNorm(channels, inner, 1, rng, dtype, shift=not softmax)
        self.v = ConvNorm(channels, inner, 1, rng, dtype, shift=not softmax)
