"""Scalar-loop reference implementations used to cross-check the vectorized ops.

Deliberately naive: plain Python loops over every index, no numpy
broadcasting tricks, so they share no code path with the fast kernels.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_loops(x, w, bias=None, stride=1, pad=0):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(C):
                        for di in range(kh):
                            for dj in range(kw):
                                r = i * stride + di - pad
                                s = j * stride + dj - pad
                                if 0 <= r < H and 0 <= s < W:
                                    acc += x[b, c, r, s] * w[o, c, di, dj]
                    out[b, o, i, j] = acc
    return out


def depthwise_loops(x, w, bias=None, stride=1, pad=0):
    B, C, H, W = x.shape
    kh, kw = w.shape[2:]
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, C, Ho, Wo))
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if bias is None else float(bias[c])
                    for di in range(kh):
                        for dj in range(kw):
                            r = i * stride + di - pad
                            s = j * stride + dj - pad
                            if 0 <= r < H and 0 <= s < W:
                                acc += x[b, c, r, s] * w[c, 0, di, dj]
                    out[b, c, i, j] = acc
    return out


def attention_loops(q, k, v, bias=None, scale=True, softmax=True):
    """q [H,Nq,d], k [H,Nk,d], v [H,Nk,dv], bias [H,Nq,Nk] -> [H,Nq,dv], one query at a time."""
    H, Nq, d = q.shape
    Nk, dv = v.shape[1], v.shape[2]
    out = np.zeros((H, Nq, dv))
    for h in range(H):
        for i in range(Nq):
            logits = []
            for j in range(Nk):
                s = sum(q[h, i, t] * k[h, j, t] for t in range(d))
                if scale:
                    s /= math.sqrt(d)
                if bias is not None:
                    s += bias[h, i, j]
                logits.append(s)
            if softmax:
                top = max(logits)
                e = [math.exp(s - top) for s in logits]
                z = sum(e)
                weights = [v_ / z for v_ in e]
            else:
                weights = logits
            for t in range(dv):
                out[h, i, t] = sum(weights[j] * v[h, j, t] for j in range(Nk))
    return out


def _pointwise_convnorm_eval(m, x):
    """1x1 conv then eval-mode norm, one output pixel at a time."""
    B, C, H, W = x.shape
    w = m.conv.weight.data[:, :, 0, 0]
    n = m.norm
    O = w.shape[0]
    out = np.zeros((B, O, H, W))
    for b in range(B):
        for o in range(O):
            scale = n.weight.data[o] / math.sqrt(n.running_var[o] + n.eps)
            shift = 0.0 if n.bias is None else n.bias.data[o]
            for i in range(H):
                for j in range(W):
                    acc = sum(w[o, c] * x[b, c, i, j] for c in range(C))
                    out[b, o, i, j] = (acc - n.running_mean[o]) * scale + shift
    return out


def attn_resample_loops(m, x):
    """Eval-mode attention resampler on ``x`` [B,C,h,w], walking every query.

    Queries come from 2x2 means (down) or from duplicating each projected
    pixel (up); the bias entry of each (query, key) pair is looked up from the
    module's offset table.
    """
    B, C, h, w = x.shape
    if m.factor == 0.5:
        pooled = np.zeros((B, C, h // 2, w // 2))
        for b in range(B):
            for c in range(C):
                for i in range(h // 2):
                    for j in range(w // 2):
                        pooled[b, c, i, j] = (x[b, c, 2 * i, 2 * j] + x[b, c, 2 * i + 1, 2 * j]
                                              + x[b, c, 2 * i, 2 * j + 1] + x[b, c, 2 * i + 1, 2 * j + 1]) / 4
        q = _pointwise_convnorm_eval(m.qkv.q, pooled)
    else:
        small = _pointwise_convnorm_eval(m.qkv.q, x)
        q = np.zeros(small.shape[:2] + (2 * h, 2 * w))
        for i in range(2 * h):
            for j in range(2 * w):
                q[:, :, i, j] = small[:, :, i // 2, j // 2]
    k, v = _pointwise_convnorm_eval(m.qkv.k, x), _pointwise_convnorm_eval(m.qkv.v, x)
    ho, wo = m.out_resolution
    d, heads = m.head_dim, m.heads
    table = m.attention_bias.data
    out = np.zeros((B, heads * d, ho, wo))
    for b in range(B):
        qt = q[b].reshape(heads, d, ho * wo).transpose(0, 2, 1)
        kt = k[b].reshape(heads, d, h * w).transpose(0, 2, 1)
        vt = v[b].reshape(heads, d, h * w).transpose(0, 2, 1)
        bias = np.zeros((heads, ho * wo, h * w))
        for hd in range(heads):
            for i in range(ho * wo):
                for j in range(h * w):
                    bias[hd, i, j] = table[hd, m.bias_index[i, j]]
        res = attention_loops(qt, kt, vt, bias, scale=m.attn_scale, softmax=m.softmax)
        out[b] = res.transpose(0, 2, 1).reshape(heads * d, ho, wo)
    return _pointwise_convnorm_eval(m.proj, out)


def overlap_counts(pred, true, K):
    """Per-class intersection, |pred|, |true| by walking every pixel."""
    inter = [0] * K
    n_pred = [0] * K
    n_true = [0] * K
    for p, t in zip(np.asarray(pred).reshape(-1).tolist(), np.asarray(true).reshape(-1).tolist()):
        n_pred[p] += 1
        n_true[t] += 1
        if p == t:
            inter[p] += 1
    return inter, n_pred, n_true


def dsc_iou_loops(pred, true, K):
    inter, n_pred, n_true = overlap_counts(pred, true, K)
    dsc, iou = [], []
    for k in range(K):
        denom = n_pred[k] + n_true[k]
        union = denom - inter[k]
        dsc.append(1.0 if denom == 0 else 2 * inter[k] / denom)
        iou.append(1.0 if union == 0 else inter[k] / union)
    return dsc, iou
