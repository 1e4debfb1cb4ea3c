"""Acceptance criteria 1-7, each at its stated tolerance.

Every test records one ``PASS``/``FAIL criterion N: ...`` line; the conftest
hook prints them at the end of the session. Run only this file with
``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from evit_unet import build, cli, forward, oracles
from evit_unet import complexity as cx
from evit_unet.checkpoint import param_scalar_count, save_checkpoint
from evit_unet.checks import BLOCK_CASES, MODEL_TOLERANCE, OP_CASES, run_scope
from evit_unet.config import EViTUNetConfig
from evit_unet.core import Tensor, container, no_grad, ops
from evit_unet.core.gradcheck import TOLERANCE
from evit_unet.nn.attention import attention
from evit_unet.nn.blocks import MHSA, GlobalLocalBlock, LocalBlock, mhsa_forward, set_layer_scales
from evit_unet.nn.resample import AttnResample, attn_downsample, attn_resample, attn_upsample
from evit_unet.nn.skip import SkipFusion, channel_attention_gate
from evit_unet.pgm import load_pgm
from evit_unet.training.metrics import (confusion_counts, dsc_from_counts, dsc_metric, iou_from_counts,
                                        iou_metric)
from evit_unet.training.synth import load_dataset

F64 = np.float64
TOY_CFG = Path(__file__).resolve().parents[1] / "configs" / "toy.cfg"
RESULTS = {}


def record(n, ok, detail):
    RESULTS[n] = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    return ok


def t64(a):
    return Tensor(np.asarray(a, dtype=F64), dtype=F64)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _randomize_stats(m, rng):
    for _, mod in m.named_modules():
        if hasattr(mod, "running_mean"):
            mod.running_mean[...] = 0.1 * rng.standard_normal(mod.running_mean.shape)
            mod.running_var[...] = rng.uniform(0.5, 2.0, mod.running_var.shape)
    return m


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    seeds = range(5)
    seen, bad, worst = {}, [], {}
    for scope in ("op", "block", "model"):
        for name, s, report in run_scope(scope, seeds=seeds):
            seen.setdefault(name, set()).add(s)
            worst[scope] = max(worst.get(scope, 0.0), report.max_rel_error)
            if not report.passed:
                bad.append(f"{name}/seed{s}")
    elapsed = time.perf_counter() - start
    required = set(OP_CASES) | set(BLOCK_CASES) | {"tiny_model"}
    block_types = {"local_block", "global_local_block", "attn_downsample", "attn_upsample", "skip_gate",
                   "dice_loss", "cross_entropy"}
    covered = required <= set(seen) and block_types <= set(seen) and all(len(v) >= 5 for v in seen.values())
    ok = not bad and covered and elapsed < 300 and TOLERANCE == 1e-5 and MODEL_TOLERANCE == 1e-4
    detail = (f"{len(seen)} cases x 5 seeds, worst rel err op {worst['op']:.1e} block {worst['block']:.1e} "
              f"(tol 1e-5) model {worst['model']:.1e} (tol 1e-4), {elapsed:.0f}s")
    if bad:
        detail += f"; failed {', '.join(bad[:5])}"
    assert record(1, ok, detail)


def test_criterion_2_equation_fidelity():
    rng = np.random.default_rng(0)
    ok = True
    # zero layer scales: every residual block reduces to its input exactly
    for block, hw, c in ((LocalBlock(8, 4, rng, F64), (5, 3), 8),
                         (GlobalLocalBlock(8, 4, 2, 4, (4, 4), rng, F64), (4, 4), 8)):
        set_layer_scales(block, 0.0)
        x = t64(rng.standard_normal((2, c) + hw))
        for mode in ("train", "eval"):
            with no_grad():
                ok &= bool(np.array_equal(block(x, mode).data, x.data))
    identity = ok

    # softmax rows in MHSA and both resamplers
    row_err = 0.0
    q, k, v = (rng.standard_normal((2, 2, 9, 4)) for _ in range(3))
    _, w = attention(t64(q), t64(k), t64(v), t64(rng.standard_normal((2, 9, 9))))
    row_err = max(row_err, np.abs(w.data.sum(-1) - 1).max())
    mhsa = MHSA(8, 2, 4, (3, 3), rng, F64)
    mhsa.attention_bias.data[...] = rng.standard_normal(mhsa.attention_bias.shape)
    with no_grad():
        _, w = mhsa_forward(t64(rng.standard_normal((2, 8, 3, 3))), mhsa, return_weights=True)
    row_err = max(row_err, np.abs(w.data.sum(-1) - 1).max())
    down = AttnResample(8, 12, 2, 4, (6, 6), 0.5, rng, F64)
    up = AttnResample(12, 8, 2, 4, (3, 3), 2, rng, F64)
    with no_grad():
        y, w1 = attn_resample(t64(rng.standard_normal((2, 8, 6, 6))), down, "train", return_weights=True)
        _, w2 = attn_resample(y, up, "train", return_weights=True)
    row_err = max(row_err, np.abs(w1.data.sum(-1) - 1).max(), np.abs(w2.data.sum(-1) - 1).max())

    # skip gate against a scalar evaluation on a 1x2x2x2 case
    m = SkipFusion(2, rng, F64)
    x, g = rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 2, 2, 2))
    got = channel_attention_gate(t64(x), t64(g), m).data
    wx, bx, wg, bg = m.mlp_x.weight.data, m.mlp_x.bias.data, m.mlp_g.weight.data, m.mlp_g.bias.data
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
    gate_err = np.abs(got - ref).max()
    ok = identity and row_err < 1e-6 and gate_err < 1e-7
    assert record(2, ok, f"zero-scale identity {'exact' if identity else 'BROKEN'}, "
                         f"softmax row err {row_err:.1e} (tol 1e-6), skip gate err {gate_err:.1e} (tol 1e-7)")


def test_criterion_3_resampling_contracts():
    rng = np.random.default_rng(0)
    down = _randomize_stats(AttnResample(8, 16, 2, 4, (8, 6), 0.5, rng, F64), rng)
    up = _randomize_stats(AttnResample(16, 8, 2, 4, (4, 3), 2, rng, F64), rng)
    for m in (down, up):
        m.attention_bias.data[...] = rng.standard_normal(m.attention_bias.shape)
    x = rng.standard_normal((2, 8, 8, 6))
    with no_grad():
        y = attn_downsample(t64(x), down, "eval")
        z = attn_upsample(y, up, "eval")
    shapes = y.shape == (2, 16, 4, 3) and z.shape == x.shape
    err = max(np.abs(y.data - oracles.attn_resample_loops(down, x)).max(),
              np.abs(z.data - oracles.attn_resample_loops(up, y.data)).max())
    ok = shapes and err < 1e-6
    assert record(3, ok, f"8x6 -> {y.shape[2]}x{y.shape[3]} -> {z.shape[2]}x{z.shape[3]} tokens, "
                         f"naive oracle err {err:.1e} (tol 1e-6)")


def test_criterion_4_architecture_shape():
    cfg = EViTUNetConfig()
    model = build(cfg)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (2, 3, 224, 224)).astype(np.float32))
    with no_grad():
        logits, feats = forward(model, x, "eval", return_features=True)
    K = cfg.num_classes
    mirror = all(feats[f"dec{s}"].shape == feats[f"enc{s}"].shape for s in (1, 2, 3, 4))
    ok = logits.shape == (2, K, 224, 224) and mirror and np.isfinite(logits.data).all()
    stages = ", ".join(f"{feats[f'enc{s}'].shape[1]}x{feats[f'enc{s}'].shape[2]}" for s in (1, 2, 3, 4))
    assert record(4, ok, f"logits {tuple(logits.shape)}, encoder/decoder stages mirror ({stages})")


def _dsc_foreground(pred, true, K):
    return float(dsc_metric(pred, true, K)[1:].mean())


def test_criterion_5_end_to_end_learning(tmp_path, capsys):
    start = time.perf_counter()
    rc = cli.main(["train", "--config", str(TOY_CFG), "--out", str(tmp_path / "a")])
    elapsed = time.perf_counter() - start
    rc2 = cli.main(["train", "--config", str(TOY_CFG), "--out", str(tmp_path / "b")])
    capsys.readouterr()
    hist_a = (tmp_path / "a" / "history.csv").read_bytes()
    hist_b = (tmp_path / "b" / "history.csv").read_bytes()
    rows = hist_a.decode().strip().splitlines()
    header, last = rows[0].split(","), rows[-1].split(",")
    epochs, final = int(last[0]), float(last[header.index("eval_mean_dsc")])

    # predict on one training image
    rc3 = cli.main(["synth", "--config", str(TOY_CFG), "--out", str(tmp_path / "train_set"), "--split", "train"])
    sample = load_dataset(tmp_path / "train_set")[0]
    container.save(tmp_path / "img.evt", sample.image)
    rc4 = cli.main(["predict", "--checkpoint", str(tmp_path / "a" / cli.CHECKPOINT_NAME),
                    "--input", str(tmp_path / "img.evt"), "--out", str(tmp_path / "pred.evt")])
    capsys.readouterr()
    mask, maxval = load_pgm(tmp_path / "pred.pgm")
    pred_dsc = _dsc_foreground(mask, sample.mask, maxval + 1)
    ok = (rc == rc2 == rc3 == rc4 == 0 and epochs <= 20 and elapsed < 15 * 60 and final >= 0.90
          and hist_a == hist_b and pred_dsc >= 0.90)
    assert record(5, ok, f"{epochs} epochs in {elapsed:.0f}s, held-out mean DSC {final:.4f} (>= 0.90), "
                         f"rerun history {'identical' if hist_a == hist_b else 'DIFFERS'}, "
                         f"predict DSC {pred_dsc:.4f} (>= 0.90)")


def test_criterion_6_efficiency_accounting(tmp_path):
    cfg = EViTUNetConfig()
    gmac = cx.count_macs(cfg, (224, 224)).gmac
    units = [
        cx.conv_cost(3, 8, 3, 1, bias=True) == (3 * 8 * 9 + 8, 3 * 8 * 9),
        cx.conv_cost(8, 16, 1, 16, bias=False) == (8 * 16, 8 * 16 * 16),
        cx.depthwise_cost(40, 3, 49, bias=True) == (40 * 9 + 40, 40 * 9 * 49),
        cx.linear_cost(10, 4) == (10 * 4 + 4, 10 * 4),
        cx.attention_macs(49, 196, 32, heads=2) == 2 * (49 * 196 * 32 * 2),
        cx.bilinear_macs(9, 224 * 224) == 9 * 224 * 224 * 4,
    ]
    model = build(cfg)
    save_checkpoint(model, tmp_path / "default.evtc")
    analytic_params = cx.count_macs(cfg).total_params
    stored = param_scalar_count(tmp_path / "default.evtc")
    ok = 3.2 <= gmac <= 12.8 and all(units) and analytic_params == stored == model.num_params()
    assert record(6, ok, f"default {gmac:.2f} GMac in [3.2, 12.8], {sum(units)}/{len(units)} unit closed forms, "
                         f"params analytic {analytic_params:,} vs checkpoint {stored:,}")


def test_criterion_7_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst, combos = 0.0, 0
    for _ in range(24):
        B, C, O = (int(v) for v in rng.integers(1, 4, size=3))
        H, W = (int(v) for v in rng.integers(3, 8, size=2))
        k = int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        if H + 2 * pad < k or W + 2 * pad < k:
            continue
        x = rng.standard_normal((B, C, H, W))
        w, b = rng.standard_normal((O, C, k, k)), rng.standard_normal(O)
        got = ops.conv2d(t64(x), t64(w), t64(b), stride, pad).data
        worst = max(worst, np.abs(got - oracles.conv2d_loops(x, w, b, stride, pad)).max())
        wd, bd = rng.standard_normal((C, 1, k, k)), rng.standard_normal(C)
        got = ops.depthwise_conv2d(t64(x), t64(wd), t64(bd), stride, pad).data
        worst = max(worst, np.abs(got - oracles.depthwise_loops(x, wd, bd, stride, pad)).max())
        combos += 1

    counts_exact, metric_exact, ident = True, True, 0.0
    for _ in range(20):
        K = int(rng.integers(2, 6))
        pred, true = rng.integers(0, K, size=(2, 7, 9)), rng.integers(0, K, size=(2, 7, 9))
        inter, n_pred, n_true = confusion_counts(pred, true, K)
        ref = oracles.overlap_counts(pred, true, K)
        counts_exact &= list(inter) == ref[0] and list(n_pred) == ref[1] and list(n_true) == ref[2]
        ref_dsc, ref_iou = oracles.dsc_iou_loops(pred, true, K)
        metric_exact &= list(dsc_metric(pred, true, K)) == ref_dsc and list(iou_metric(pred, true, K)) == ref_iou
        dsc, iou = dsc_from_counts(inter, n_pred, n_true), iou_from_counts(inter, n_pred, n_true)
        ident = max(ident, np.abs(dsc - 2 * iou / (1 + iou)).max())
    ok = combos >= 20 and worst < 1e-6 and counts_exact and metric_exact and ident < 1e-9
    assert record(7, ok, f"{combos} conv/depthwise combos max err {worst:.1e} (tol 1e-6), "
                         f"counts {'exact' if counts_exact else 'MISMATCH'}, metrics "
                         f"{'exact' if metric_exact else 'MISMATCH'}, DSC/IoU identity err {ident:.1e} (tol 1e-9)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
