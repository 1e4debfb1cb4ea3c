"""Forward operators and their reverse-mode rules.

Broadcasting follows axis-of-1 semantics only: operands must have equal rank
and each axis must either agree or be 1 on one side. Python scalars are
accepted as constants and take the tensor operand's dtype.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArg, ShapeMismatch
from .tensor import Tensor, check_same_dtype, make_result, record_macs

GELU_COEFF = 0.044715
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=like.dtype))


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if len(a) != len(b):
        # A rank-0 constant combines with anything.
        if len(a) == 0:
            return b
        if len(b) == 0:
            return a
        raise ShapeMismatch(f"rank mismatch {a} vs {b}")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeMismatch(f"shapes {a} and {b} are not broadcastable")
    return tuple(out)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` back down to ``shape`` along axes that were broadcast from 1."""
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a)
    check_same_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    check_same_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a)
    check_same_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    check_same_dtype(a, b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,))


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a [B,C,H,W] map by a per-channel [C] vector."""
    check_same_dtype(x, s)
    if x.ndim != 4 or s.shape != (x.shape[1],):
        raise ShapeMismatch(f"scale_channels: x {x.shape} vs s {s.shape}")
    xd, sd = x.data, s.data
    s4 = sd.reshape(1, -1, 1, 1)

    def backward(g):
        gx = g * s4 if x.requires_grad else None
        gs = (g * xd).sum(axis=(0, 2, 3)) if s.requires_grad else None
        return gx, gs

    return make_result(xd * s4, (x, s), backward)


# ---------------------------------------------------------------------------
# activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # Split by sign so exp never overflows.
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    out[~pos] = ez / (1.0 + ez)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def _gelu_grad(xd: np.ndarray) -> np.ndarray:
    u = _SQRT_2_OVER_PI * (xd + GELU_COEFF * xd ** 3)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * xd ** 2)
    return 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du


# Indirection point for the selftest negative control; see corrupted_backward().
_BACKWARD_RULES = {"gelu": _gelu_grad}


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    out = 0.5 * xd * (1.0 + np.tanh(_SQRT_2_OVER_PI * (xd + GELU_COEFF * xd ** 3)))
    rule = _BACKWARD_RULES["gelu"]
    return make_result(out.astype(x.dtype), (x,), lambda g: (g * rule(xd),))


class corrupted_backward:
    """Context manager that swaps a backward rule for a wrong one."""

    def __init__(self, op: str = "gelu"):
        self.op = op

    def __enter__(self):
        self._saved = _BACKWARD_RULES[self.op]
        good = self._saved
        _BACKWARD_RULES[self.op] = lambda xd: 1.1 * good(xd) + 0.05
        return self

    def __exit__(self, *exc):
        _BACKWARD_RULES[self.op] = self._saved
        return False


def softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result(out, (x,), backward)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and layout

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axes, keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def getitem(x: Tensor, index) -> Tensor:
    out = np.ascontiguousarray(x.data[index])
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_result(out, (x,), backward)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    check_same_dtype(*tensors)
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeMismatch(f"concat: {t.shape} vs {ref} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    lead = _broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    record_macs(int(np.prod(lead, dtype=np.int64)) * m * k * n)

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x [B,in] . w[out,in]^T + b[out]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: x {x.shape} vs w {w.shape}")
    y = matmul(x, transpose(w, (1, 0)))
    if b is not None:
        y = add(y, reshape(b, (1, -1)))
    return y


# ---------------------------------------------------------------------------
# convolution

def _check_conv_args(stride, pad):
    if stride < 1:
        raise InvalidArg(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise InvalidArg(f"pad must be >= 0, got {pad}")


def _out_extent(n, k, stride, pad):
    if k > n + 2 * pad:
        raise ShapeMismatch(f"kernel {k} larger than padded extent {n + 2 * pad}")
    return (n + 2 * pad - k) // stride + 1


def _pad(xd, pad):
    if pad == 0:
        return xd
    return np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-D cross-correlation, NCHW layout."""
    _check_conv_args(stride, pad)
    check_same_dtype(x, w, *([bias] if bias is not None else []))
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects rank-4 x and w, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = w.shape
    if Ci != C:
        raise ShapeMismatch(f"conv2d channel mismatch: input {C}, weight {Ci}")
    if bias is not None and bias.shape != (O,):
        raise ShapeMismatch(f"conv2d bias shape {bias.shape}, expected ({O},)")
    Ho = _out_extent(H, kh, stride, pad)
    Wo = _out_extent(W, kw, stride, pad)
    record_macs(B * O * C * kh * kw * Ho * Wo)
    wd = w.data

    if kh == 1 and kw == 1 and pad == 0:
        xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
        cols = np.ascontiguousarray(xs.transpose(0, 2, 3, 1)).reshape(-1, C)
    else:
        xp = _pad(x.data, pad)
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # win: [B, C, Ho, Wo, kh, kw] -> rows (b, ho, wo), cols (c, i, j)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, C * kh * kw)
    w2 = wd.reshape(O, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        gw = (g2.T @ cols).reshape(wd.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if (bias is not None and bias.requires_grad) else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, w, bias) if bias is not None else (x, w)
    return make_result(out, inputs, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel 2-D cross-correlation; w has shape [C,1,kh,kw]."""
    _check_conv_args(stride, pad)
    check_same_dtype(x, w, *([bias] if bias is not None else []))
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != 1:
        raise ShapeMismatch(f"depthwise_conv2d expects x [B,C,H,W], w [C,1,kh,kw]; got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    if w.shape[0] != C:
        raise ShapeMismatch(f"depthwise channel mismatch: input {C}, weight {w.shape[0]}")
    if bias is not None and bias.shape != (C,):
        raise ShapeMismatch(f"depthwise bias shape {bias.shape}, expected ({C},)")
    kh, kw = w.shape[2:]
    Ho = _out_extent(H, kh, stride, pad)
    Wo = _out_extent(W, kw, stride, pad)
    record_macs(B * C * kh * kw * Ho * Wo)
    xp = _pad(x.data, pad)
    wd = w.data[:, 0]
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] * wd[:, i, j].reshape(1, C, 1, 1)
    if bias is not None:
        out += bias.data.reshape(1, C, 1, 1)

    def backward(g):
        gw = None
        if w.requires_grad:
            gw = np.empty((C, 1, kh, kw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
                    gw[:, 0, i, j] = (g * patch).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3)) if (bias is not None and bias.requires_grad) else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += g * wd[:, i, j].reshape(1, C, 1, 1)
            gx = np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W]) if pad else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, w, bias) if bias is not None else (x, w)
    return make_result(out, inputs, backward)


# ---------------------------------------------------------------------------
# normalization, pooling, resizing

def batchnorm2d(x: Tensor, gamma: Tensor, beta: Optional[Tensor], running_mean: np.ndarray,
                running_var: np.ndarray, mode: str = "train", momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Batch normalization over (B,H,W) per channel; ``beta=None`` means no shift.

    In train mode the running statistics are updated in place with
    ``r = (1 - momentum) r + momentum * batch_stat``; the variance fed to the
    running estimate is the unbiased one.
    """
    affine = (gamma,) if beta is None else (gamma, beta)
    check_same_dtype(x, *affine)
    if x.ndim != 4 or any(t.shape != (x.shape[1],) for t in affine):
        raise ShapeMismatch(f"batchnorm2d: x {x.shape}, affine {[t.shape for t in affine]}")
    B, C, H, W = x.shape
    xd = x.data
    g4 = gamma.data.reshape(1, C, 1, 1)
    shift = 0.0 if beta is None else beta.data.reshape(1, C, 1, 1)
    if mode == "train":
        m = B * H * W
        if m == 1:
            raise InvalidArg("batchnorm2d in train mode needs more than one value per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu.reshape(1, C, 1, 1)) * inv.reshape(1, C, 1, 1)
        out = xhat * g4 + shift

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta is not None and beta.requires_grad else None
            gx = None
            if x.requires_grad:
                gxhat = g * g4
                gx = (inv.reshape(1, C, 1, 1) / m) * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                )
            return (gx, gg) if beta is None else (gx, gg, gbeta)

    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise InvalidArg("eval-mode batchnorm needs running statistics")
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (xd - running_mean.reshape(1, C, 1, 1).astype(x.dtype)) * inv.reshape(1, C, 1, 1)
        out = xhat * g4 + shift

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
            gbeta = g.sum(axis=(0, 2, 3)) if beta is not None and beta.requires_grad else None
            gx = g * (g4 * inv.reshape(1, C, 1, 1)) if x.requires_grad else None
            return (gx, gg) if beta is None else (gx, gg, gbeta)
    else:
        raise InvalidArg(f"mode must be 'train' or 'eval', got {mode!r}")
    return make_result(out.astype(x.dtype), (x,) + affine, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    hw = H * W

    def backward(g):
        return (np.broadcast_to(g.reshape(B, C, 1, 1) / hw, (B, C, H, W)).astype(g.dtype),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), backward)


def avg_pool2x(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average pooling (stride 2)."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise InvalidArg(f"avg_pool2x needs even extents, got {H}x{W}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
        return (up * 0.25,)

    return make_result(out.astype(x.dtype), (x,), backward)


def nearest_upsample(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return make_result(out, (x,), backward)


def bilinear_matrix(n: int, factor: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix [factor*n, n] for half-pixel (align_corners=False) resizing.

    Output index o samples source coordinate (o + 0.5) / factor - 0.5, clamped
    to [0, n - 1], and blends the two neighbouring source pixels linearly.
    """
    m = np.zeros((factor * n, n), dtype=dtype)
    for o in range(factor * n):
        src = (o + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n - 1)
        t = src - lo
        m[o, lo] += 1.0 - t
        m[o, hi] += t
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if factor not in (2, 4):
        raise InvalidArg(f"bilinear_upsample factor must be 2 or 4, got {factor}")
    if x.ndim != 4:
        raise ShapeMismatch(f"bilinear_upsample expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    uh = bilinear_matrix(H, factor, x.dtype)
    uw = bilinear_matrix(W, factor, x.dtype)
    record_macs(4 * B * C * factor * H * factor * W)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def backward(g):
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return make_result(np.ascontiguousarray(out), (x,), backward)


def gather_bias(table: Tensor, index: np.ndarray) -> Tensor:
    """Expand a [H, T] relative-offset table to [H, *index.shape] via integer lookup."""
    T = table.shape[1]
    flat = index.reshape(-1)

    def backward(g):
        heads = g.shape[0]
        g2 = g.reshape(heads, -1)
        gt = np.stack([np.bincount(flat, weights=g2[h], minlength=T) for h in range(heads)])
        return (gt.astype(g.dtype),)

    out = table.data[:, flat].reshape((table.shape[0],) + index.shape)
    return make_result(out, (table,), backward)
