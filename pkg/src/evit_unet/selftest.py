"""The invariant suite behind ``evit-unet selftest``.

Each group returns ``(passed, checked, detail)``. Output carries no timings so
the text is identical across runs.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import oracles
from .checks import run_scope
from .config import tiny_config
from .core import Tensor, no_grad, ops
from .model import build, forward
from .nn.attention import attention
from .nn.blocks import set_layer_scales
from .training.metrics import confusion_counts, dsc_from_counts, iou_from_counts

ORACLE_TOL = 1e-6


def _gradcheck_group(scope, seeds):
    def run():
        results = list(run_scope(scope, seeds=range(seeds)))
        bad = [f"{name}/seed{s}" for name, s, r in results if not r.passed]
        worst = max(r.max_rel_error for _, _, r in results)
        return not bad, len(results), f"worst rel err {worst:.1e}" + (f"; failed {', '.join(bad[:4])}" if bad else "")
    return run


def _conv_oracles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for case in range(20):
        B, C, O = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        H, W = rng.integers(3, 7, size=2)
        k = int(rng.choice([1, 3]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x = rng.standard_normal((B, C, H, W))
        w = rng.standard_normal((O, C, k, k))
        b = rng.standard_normal(O)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        worst = max(worst, np.abs(got - oracles.conv2d_loops(x, w, b, stride, pad)).max())
        wd = rng.standard_normal((C, 1, k, k))
        got = ops.depthwise_conv2d(Tensor(x), Tensor(wd), None, stride, pad).data
        worst = max(worst, np.abs(got - oracles.depthwise_loops(x, wd, None, stride, pad)).max())
    return worst < ORACLE_TOL, 40, f"max abs diff {worst:.1e}"


def _attention_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for case in range(5):
        H, Nq, Nk, d = 2, int(rng.integers(1, 6)), int(rng.integers(1, 6)), 3
        q, k, v = (rng.standard_normal((1, H, n, d)) for n in (Nq, Nk, Nk))
        bias = rng.standard_normal((H, Nq, Nk))
        out, weights = attention(Tensor(q), Tensor(k), Tensor(v), Tensor(bias))
        ref = oracles.attention_loops(q[0], k[0], v[0], bias)
        worst = max(worst, np.abs(out.data[0] - ref).max(), np.abs(weights.data.sum(-1) - 1).max())
    return worst < ORACLE_TOL, 5, f"max abs diff {worst:.1e}"


def _shape_symmetry():
    model = build(tiny_config(), np.float64)
    x = Tensor(np.random.default_rng(2).standard_normal((2, 3, 32, 32)))
    with no_grad():
        logits, feats = forward(model, x, "eval", return_features=True)
    ok = logits.shape == (2, 2, 32, 32)
    ok &= all(feats[f"dec{s}"].shape == feats[f"enc{s}"].shape for s in (1, 2, 3, 4))
    return ok, 5, "decoder stage s matches encoder stage s"


def _layer_scale_identity():
    from .nn.blocks import GlobalLocalBlock, LocalBlock

    rng = np.random.default_rng(3)
    ok = True
    for block in (LocalBlock(8, 2, rng, np.float64), GlobalLocalBlock(8, 2, 2, 4, (4, 4), rng, np.float64)):
        set_layer_scales(block, 0.0)
        x = Tensor(rng.standard_normal((2, 8, 4, 4)))
        with no_grad():
            ok &= bool(np.array_equal(block(x, "train").data, x.data))
    return ok, 2, "x + 0 * branch == x exactly"


def _metric_identities():
    rng = np.random.default_rng(4)
    ok = True
    for case in range(10):
        K = int(rng.integers(2, 5))
        pred, true = rng.integers(0, K, size=(2, 9, 9)), rng.integers(0, K, size=(2, 9, 9))
        inter, n_pred, n_true = confusion_counts(pred, true, K)
        ref = oracles.overlap_counts(pred, true, K)
        ok &= list(inter) == ref[0] and list(n_pred) == ref[1] and list(n_true) == ref[2]
        dsc, iou = dsc_from_counts(inter, n_pred, n_true), iou_from_counts(inter, n_pred, n_true)
        ok &= bool(np.all(np.abs(dsc - 2 * iou / (1 + iou)) < 1e-9))
    return ok, 10, "counts match the per-pixel oracle; DSC = 2 IoU / (1 + IoU)"


def groups(seeds: int = 5):
    return [
        ("gradcheck/op", _gradcheck_group("op", seeds)),
        ("gradcheck/block", _gradcheck_group("block", seeds)),
        ("gradcheck/model", _gradcheck_group("model", seeds)),
        ("oracle/conv", _conv_oracles),
        ("oracle/attention", _attention_oracle),
        ("shape/symmetry", _shape_symmetry),
        ("identity/layer-scale", _layer_scale_identity),
        ("metrics/identities", _metric_identities),
    ]


def run_selftest(corrupt_backward: bool = False, seeds: int = 5, out=print) -> bool:
    """Run every group; with ``corrupt_backward`` one backward rule is broken first."""
    guard = ops.corrupted_backward("gelu") if corrupt_backward else contextlib.nullcontext()
    all_ok = True
    with guard:
        for name, fn in groups(seeds):
            ok, checked, detail = fn()
            all_ok &= bool(ok)
            out(f"{'PASS' if ok else 'FAIL'}  {name:<22} {checked:4d} checks  {detail}\n")
    out(f"selftest: {'all groups passed' if all_ok else 'FAILED'}\n")
    return all_ok
