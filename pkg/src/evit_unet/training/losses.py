"""Segmentation losses on [B,K,H,W] logits against [B,H,W] integer masks."""

from __future__ import annotations

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from ..errors import LabelOutOfRange, ShapeMismatch

DICE_SMOOTH = 1e-5


def _check(logits: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if logits.ndim != 4 or mask.shape != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise ShapeMismatch(f"logits {logits.shape} do not match mask {mask.shape}")
    K = logits.shape[1]
    if mask.size and (mask.min() < 0 or mask.max() >= K):
        raise LabelOutOfRange(f"mask labels must lie in [0, {K}), got [{mask.min()}, {mask.max()}]")
    return mask.astype(np.int64)


def one_hot(mask: np.ndarray, K: int, dtype) -> np.ndarray:
    """[B,H,W] -> [B,H,W,K]."""
    return (mask[..., None] == np.arange(K)).astype(dtype)


def _channels_last(logits: Tensor) -> Tensor:
    return ops.transpose(logits, (0, 2, 3, 1))


def cross_entropy_loss(logits: Tensor, mask) -> Tensor:
    """Mean pixelwise negative log-likelihood of the softmaxed logits."""
    mask = _check(logits, mask)
    K = logits.shape[1]
    logp = ops.log_softmax_lastdim(_channels_last(logits))
    picked = ops.mul(logp, Tensor._wrap(one_hot(mask, K, logits.dtype)))
    return ops.mul(ops.sum(picked), -1.0 / mask.size)


def dice_loss(logits: Tensor, mask, smooth: float = DICE_SMOOTH) -> Tensor:
    """1 - mean over (sample, class) of (2 sum(p t) + s) / (sum(p) + sum(t) + s)."""
    mask = _check(logits, mask)
    B, K = logits.shape[:2]
    p = ops.softmax_lastdim(_channels_last(logits))
    t = one_hot(mask, K, logits.dtype)
    inter = ops.sum(ops.mul(p, Tensor._wrap(t)), axis=(1, 2))
    denom = ops.add(ops.sum(p, axis=(1, 2)), Tensor._wrap(t.sum(axis=(1, 2)) + smooth))
    dice = ops.div(ops.add(ops.mul(inter, 2.0), smooth), denom)
    return ops.sub(1.0, ops.mean(dice))


def combined_loss(logits: Tensor, mask, ce_weight: float = 0.5, dice_weight: float = 0.5) -> Tensor:
    terms = []
    if ce_weight:
        terms.append(ops.mul(cross_entropy_loss(logits, mask), ce_weight))
    if dice_weight:
        terms.append(ops.mul(dice_loss(logits, mask), dice_weight))
    if not terms:
        return ops.mul(ops.sum(logits), 0.0)
    out = terms[0]
    for t in terms[1:]:
        out = ops.add(out, t)
    return out
