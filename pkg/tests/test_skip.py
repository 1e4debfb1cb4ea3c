import numpy as np
import pytest

from evit_unet.core import Tensor, no_grad
from evit_unet.errors import ShapeMismatch
from evit_unet.nn.skip import SkipFusion, channel_attention_gate, gate_logits

F64 = np.float64


def t64(a):
    return Tensor(np.asarray(a, dtype=F64), dtype=F64)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_gate_matches_scalar_evaluation(rng):
    m = SkipFusion(2, rng, F64)
    x, g = rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 2, 2, 2))
    got = channel_attention_gate(t64(x), t64(g), m).data
    wx, bx, wg, bg = (m.mlp_x.weight.data, m.mlp_x.bias.data, m.mlp_g.weight.data, m.mlp_g.bias.data)
    ref = np.zeros_like(x)
    for c in range(2):
        att = 0.0
        for j in range(2):
            ax = sum(x[0, j, a, b] for a in range(2) for b in range(2)) / 4
            ag = sum(g[0, j, a, b] for a in range(2) for b in range(2)) / 4
            att += wx[c, j] * ax + wg[c, j] * ag
        att = (att + bx[c] + bg[c]) / 2
        for a in range(2):
            for b in range(2):
                ref[0, c, a, b] = max(0.0, x[0, c, a, b] * sigmoid(att))
    assert np.abs(got - ref).max() < 1e-7


def _saturate(m, bias):
    for lin in (m.mlp_x, m.mlp_g):
        lin.weight.data[...] = 0.0
        lin.bias.data[...] = bias


def test_saturated_gates(rng):
    m = SkipFusion(4, rng, F64)
    x, g = t64(rng.standard_normal((2, 4, 3, 3))), t64(rng.standard_normal((2, 4, 3, 3)))
    _saturate(m, 50.0)
    assert np.allclose(channel_attention_gate(x, g, m).data, np.maximum(x.data, 0))
    _saturate(m, -50.0)
    assert np.abs(channel_attention_gate(x, g, m).data).max() < 1e-20


def test_gate_strictly_inside_unit_interval(rng):
    m = SkipFusion(4, rng, F64)
    x, g = t64(rng.standard_normal((3, 4, 2, 2))), t64(rng.standard_normal((3, 4, 2, 2)))
    gate = sigmoid(gate_logits(x, g, m).data)
    assert gate.shape == (3, 4) and np.all((gate > 0) & (gate < 1))


def test_selector_fuse_reduces_to_relu(rng):
    m = SkipFusion(3, rng, F64)
    _saturate(m, 50.0)
    w = np.zeros((3, 6, 1, 1))
    w[:, :3, 0, 0] = np.eye(3)
    m.fuse.conv.weight.data[...] = w
    x, g = t64(rng.standard_normal((2, 3, 4, 4))), t64(rng.standard_normal((2, 3, 4, 4)))
    with no_grad():
        out = m(x, g, "eval").data
    assert np.allclose(out, np.maximum(x.data, 0) / np.sqrt(1 + 1e-5))


def test_fuse_shape_and_batch_equivariance(rng):
    m = SkipFusion(4, rng, F64)
    x, g = rng.standard_normal((3, 4, 3, 3)), rng.standard_normal((3, 4, 3, 3))
    perm = [1, 2, 0]
    with no_grad():
        out = m(t64(x), t64(g), "eval").data
        outp = m(t64(x[perm]), t64(g[perm]), "eval").data
    assert out.shape == x.shape
    assert np.allclose(outp, out[perm], atol=1e-12)


def test_shape_errors(rng):
    m = SkipFusion(4, rng, F64)
    with pytest.raises(ShapeMismatch):
        m(t64(np.ones((1, 4, 2, 2))), t64(np.ones((1, 4, 3, 3))))
    with pytest.raises(ShapeMismatch):
        m(t64(np.ones((1, 3, 2, 2))), t64(np.ones((1, 3, 2, 2))))
