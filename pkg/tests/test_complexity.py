from pathlib import Path

import numpy as np
import pytest

from evit_unet import build, tiny_config, toy_config
from evit_unet import complexity as cx
from evit_unet.config import EViTUNetConfig
from evit_unet.core import Tensor, count_runtime_macs, no_grad
from evit_unet.nn.module import Conv2d, DepthwiseConv2d

GOLDEN = Path(__file__).parent / "golden" / "toy_flops.txt"


def test_unit_counts_closed_form(rng):
    assert cx.conv_cost(3, 8, 3, 1, bias=True)[0] == 3 * 8 * 9 + 8 == 224
    assert cx.depthwise_cost(40, 3, 1, bias=True)[0] == 40 * 9 + 40 == 400
    assert cx.conv_cost(8, 16, 1, 16)[1] == 8 * 16 * 16 == 2048
    assert cx.attention_macs(4, 4, 2) == 4 * 4 * 2 + 4 * 4 * 2 == 64
    # the analytic unit counts agree with built layers
    assert Conv2d(3, 8, 3, rng, np.float32).num_params() == 224
    assert DepthwiseConv2d(40, 3, rng, np.float32).num_params() == 400


def test_single_conv_runtime_macs(rng):
    layer = Conv2d(8, 16, 1, rng, np.float32)
    with no_grad(), count_runtime_macs() as c:
        layer(Tensor(np.zeros((1, 8, 4, 4), np.float32)))
    assert c.total == 2048


@pytest.mark.parametrize("factory", [tiny_config, toy_config])
@pytest.mark.parametrize("softmax", [True, False])
def test_analytic_matches_model(factory, softmax, rng):
    cfg = factory(resample_softmax=softmax)
    model = build(cfg)
    report = cx.count_macs(cfg, batch=2)
    assert report.total_params == model.num_params() == cx.count_params(model).total_params
    x = Tensor(rng.uniform(0, 1, (2, 3) + cfg.input_hw).astype(np.float32))
    with no_grad(), count_runtime_macs() as c, np.errstate(all="ignore"):
        model(x, "train")
    assert c.total == report.total_macs


def test_default_band():
    gmac = cx.count_macs(EViTUNetConfig()).gmac
    assert 3.2 <= gmac <= 12.8


def test_linear_in_batch():
    cfg = toy_config()
    one, three = cx.count_macs(cfg, batch=1), cx.count_macs(cfg, batch=3)
    assert three.total_macs == 3 * one.total_macs
    assert three.total_params == one.total_params


def test_stem_scales_quadratically():
    assert cx.stem_cost(40, 128, 128)[1] == 4 * cx.stem_cost(40, 64, 64)[1]


def test_attention_quadratic_in_tokens():
    assert cx.attention_macs(2 * 9, 2 * 9, 8, 2) == 4 * cx.attention_macs(9, 9, 8, 2)


def test_totals_are_row_sums():
    report = cx.count_macs(toy_config())
    assert report.total_macs == sum(r.macs for r in report.rows)
    assert report.input_shape == (1, 3, 64, 64)


def test_csv_round_trip():
    report = cx.count_macs(toy_config())
    data = cx.emit_report(report, "csv")
    back = cx.parse_csv_report(data)
    assert [(r.module, r.path, r.params, r.macs) for r in back.rows] == \
           [(r.module, r.path, r.params, r.macs) for r in report.rows]
    assert data.splitlines()[0] == b"module,path,params,macs"


def test_empty_report_is_header_only():
    assert cx.emit_report(cx.CostReport(), "csv") == b"module,path,params,macs\n"
    assert cx.emit_report(cx.CostReport(), "text").decode().count("\n") == 1


def test_text_report_matches_golden():
    assert cx.emit_report(cx.count_macs(toy_config()), "text") == GOLDEN.read_bytes()


def test_text_report_states_convention():
    text = cx.emit_report(cx.count_macs(tiny_config()), "text").decode()
    assert "counted as 0" in text and text.splitlines()[0].split()[:4] == ["module", "path", "params", "MACs"]


def test_unknown_format():
    with pytest.raises(ValueError):
        cx.emit_report(cx.CostReport(), "xml")
