"""Cross-check forward values and gradients against torch where it is installed.

torch is never imported by the package; it serves here only as an
independently written reference.
"""

import numpy as np
import pytest

from evit_unet.core import Tensor, backward, ops
from evit_unet.training import losses

torch = pytest.importorskip("torch")
F = torch.nn.functional
F64 = np.float64


def pair(a):
    return Tensor(a, requires_grad=True, dtype=F64), torch.tensor(a, requires_grad=True)


def project_and_backward(ours, ref, rng):
    proj = rng.standard_normal(ours.shape)
    backward(ops.sum(ops.mul(ours, Tensor(proj, dtype=F64))))
    (ref * torch.tensor(proj)).sum().backward()


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d(rng, stride, pad):
    (x, tx), (w, tw), (b, tb) = pair(rng.standard_normal((2, 3, 7, 6))), pair(rng.standard_normal((4, 3, 3, 3))), \
        pair(rng.standard_normal(4))
    out, ref = ops.conv2d(x, w, b, stride, pad), F.conv2d(tx, tw, tb, stride=stride, padding=pad)
    assert np.abs(out.data - ref.detach().numpy()).max() < 1e-10
    project_and_backward(out, ref, rng)
    for ours, theirs in ((x, tx), (w, tw), (b, tb)):
        assert np.abs(ours.grad - theirs.grad.numpy()).max() < 1e-10


@pytest.mark.parametrize("stride", [1, 2])
def test_depthwise(rng, stride):
    (x, tx), (w, tw) = pair(rng.standard_normal((2, 5, 6, 7))), pair(rng.standard_normal((5, 1, 3, 3)))
    out, ref = ops.depthwise_conv2d(x, w, None, stride, 1), F.conv2d(tx, tw, stride=stride, padding=1, groups=5)
    assert np.abs(out.data - ref.detach().numpy()).max() < 1e-10
    project_and_backward(out, ref, rng)
    assert np.abs(x.grad - tx.grad.numpy()).max() < 1e-10
    assert np.abs(w.grad - tw.grad.numpy()).max() < 1e-10


def test_batchnorm_train(rng):
    (x, tx), (g, tg), (b, tb) = pair(rng.standard_normal((3, 4, 2, 5))), pair(rng.uniform(0.5, 1.5, 4)), \
        pair(rng.standard_normal(4))
    rm, rv = np.zeros(4), np.ones(4)
    trm, trv = torch.zeros(4, dtype=torch.float64), torch.ones(4, dtype=torch.float64)
    out = ops.batchnorm2d(x, g, b, rm, rv, "train")
    ref = F.batch_norm(tx, trm, trv, tg, tb, training=True, momentum=0.1, eps=1e-5)
    assert np.abs(out.data - ref.detach().numpy()).max() < 1e-10
    assert np.abs(rm - trm.numpy()).max() < 1e-12 and np.abs(rv - trv.numpy()).max() < 1e-12
    project_and_backward(out, ref, rng)
    for ours, theirs in ((x, tx), (g, tg), (b, tb)):
        assert np.abs(ours.grad - theirs.grad.numpy()).max() < 1e-10


def test_gelu_tanh(rng):
    x, tx = pair(rng.standard_normal((5, 6)) * 3)
    out, ref = ops.gelu(x), F.gelu(tx, approximate="tanh")
    assert np.abs(out.data - ref.detach().numpy()).max() < 1e-12
    project_and_backward(out, ref, rng)
    assert np.abs(x.grad - tx.grad.numpy()).max() < 1e-12


@pytest.mark.parametrize("factor", [2, 4])
def test_bilinear(rng, factor):
    x, tx = pair(rng.standard_normal((2, 3, 3, 5)))
    out = ops.bilinear_upsample(x, factor)
    ref = F.interpolate(tx, scale_factor=factor, mode="bilinear", align_corners=False)
    assert np.abs(out.data - ref.detach().numpy()).max() < 1e-12
    project_and_backward(out, ref, rng)
    assert np.abs(x.grad - tx.grad.numpy()).max() < 1e-12


def test_softmax_and_log_softmax(rng):
    x, tx = pair(rng.standard_normal((3, 7)) * 4)
    assert np.abs(ops.softmax_lastdim(x).data - torch.softmax(tx, -1).detach().numpy()).max() < 1e-12
    out, ref = ops.log_softmax_lastdim(x), torch.log_softmax(tx, -1)
    assert np.abs(out.data - ref.detach().numpy()).max() < 1e-12
    project_and_backward(out, ref, rng)
    assert np.abs(x.grad - tx.grad.numpy()).max() < 1e-12


def test_cross_entropy(rng):
    z, tz = pair(rng.standard_normal((2, 4, 3, 5)))
    mask = rng.integers(0, 4, size=(2, 3, 5))
    loss = losses.cross_entropy_loss(z, mask)
    ref = F.cross_entropy(tz, torch.tensor(mask))
    assert abs(loss.item() - ref.item()) < 1e-12
    backward(loss)
    ref.backward()
    assert np.abs(z.grad - tz.grad.numpy()).max() < 1e-12


def test_avg_pool_and_nearest(rng):
    x, tx = pair(rng.standard_normal((1, 2, 4, 6)))
    assert np.abs(ops.avg_pool2x(x).data - F.avg_pool2d(tx, 2).detach().numpy()).max() < 1e-12
    up = F.interpolate(tx, scale_factor=2, mode="nearest").detach().numpy()
    assert np.array_equal(ops.nearest_upsample(x, 2).data, up)
