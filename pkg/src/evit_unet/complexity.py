"""Analytic parameter and multiply-accumulate (MAC) accounting.

Conventions: a dense conv costs ``C_out * C_in * kh * kw`` MACs per output
pixel, a depthwise conv ``C * kh * kw``; a linear layer ``in * out`` per
sample; attention per head ``Nq * Nk * d`` for the logits plus the same for
the weighted sum; bilinear resizing 4 MACs per output element. Bias adds,
normalization, activations, softmax, pooling and nearest duplication count
as 0 MACs. FLOPs are reported as 2 x MACs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List

from .config import EViTUNetConfig
from .nn.attention import bias_table_size

CSV_HEADER = ["module", "path", "params", "macs"]
FOOTER = ("MACs: conv/linear/attention matmuls and bilinear resize (4 per output); "
          "norm, activation, softmax, pooling counted as 0. FLOPs = 2 x MACs.")


@dataclass
class CostRow:
    module: str
    path: str
    params: int
    macs: int


@dataclass
class CostReport:
    rows: List[CostRow] = field(default_factory=list)
    input_shape: tuple = ()

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def gmac(self) -> float:
        return self.total_macs / 1e9


# ---------------------------------------------------------------------------
# unit costs: each returns (params, macs)

def conv_cost(cin, cout, k, out_pixels, bias=True, norm=False):
    """Params and MACs of a conv; a normed conv has no bias of its own."""
    if norm:
        bias = False
    params = cout * cin * k * k + (cout if bias else 0) + (2 * cout if norm else 0)
    return params, cout * cin * k * k * out_pixels


def depthwise_cost(c, k, out_pixels, bias=True, norm=False):
    if norm:
        bias = False
    params = c * k * k + (c if bias else 0) + (2 * c if norm else 0)
    return params, c * k * k * out_pixels


def linear_cost(fan_in, fan_out, bias=True):
    return fan_in * fan_out + (fan_out if bias else 0), fan_in * fan_out


def attention_macs(nq, nk, d, heads=1):
    """Logits plus weighted sum; projections excluded."""
    return heads * (nq * nk * d + nq * nk * d)


def bilinear_macs(channels, out_pixels):
    return 4 * channels * out_pixels


def _sum(*costs):
    return sum(c[0] for c in costs), sum(c[1] for c in costs)


def ffn_cost(c, e, n):
    hidden = c * e
    return _sum(conv_cost(c, hidden, 1, n, norm=True), depthwise_cost(hidden, 3, n, norm=True),
                conv_cost(hidden, c, 1, n, norm=True))


def local_block_cost(c, e, n):
    p, m = ffn_cost(c, e, n)
    return p + c, m


def mhsa_cost(c, heads, d, hw):
    n = hw[0] * hw[1]
    inner = heads * d
    p, m = _sum(conv_cost(c, 3 * inner, 1, n, norm=True), conv_cost(inner, c, 1, n, norm=True))
    # the key and value norms have no shift under softmax
    return p - 2 * inner + heads * bias_table_size(hw), m + attention_macs(n, n, d, heads)


def global_local_block_cost(c, e, heads, d, hw):
    pa, ma = mhsa_cost(c, heads, d, hw)
    pl, ml = local_block_cost(c, e, hw[0] * hw[1])
    return pa + c + pl, ma + ml


def stem_cost(c1, H, W):
    return _sum(conv_cost(3, c1 // 2, 3, (H // 2) * (W // 2), norm=True),
                conv_cost(c1 // 2, c1, 3, (H // 4) * (W // 4), norm=True))


def conv_down_cost(cin, cout, out_n):
    return conv_cost(cin, cout, 3, out_n, norm=True)


def conv_up_cost(cin, cout, out_n):
    p, m = conv_cost(cin, cout, 1, out_n, norm=True)
    return p, m + bilinear_macs(cin, out_n)


def attn_resample_cost(cin, cout, heads, d, in_hw, factor, softmax=True):
    n = in_hw[0] * in_hw[1]
    nq = n // 4 if factor == 0.5 else 4 * n
    inner = heads * d
    q_pixels = nq if factor == 0.5 else n  # the up path projects before duplicating
    p, m = _sum(conv_cost(cin, inner, 1, q_pixels, norm=True), conv_cost(cin, 2 * inner, 1, n, norm=True),
                conv_cost(inner, cout, 1, nq, norm=True))
    if softmax:
        p -= 2 * inner
    return p + heads * bias_table_size(in_hw), m + attention_macs(nq, n, d, heads)


def skip_cost(c, n):
    return _sum(linear_cost(c, c), linear_cost(c, c), conv_cost(2 * c, c, 1, n, norm=True))


def head_cost(c1, k, H, W):
    p, m = conv_cost(c1, k, 1, H * W)
    return p, m + bilinear_macs(c1, H * W)


# ---------------------------------------------------------------------------

def count_macs(config: EViTUNetConfig, input_hw=None, batch: int = 1) -> CostReport:
    """Per-stage analytic cost of ``config`` at ``input_hw`` (defaults to the config's)."""
    if input_hw is not None and tuple(input_hw) != config.input_hw:
        config = config.replace(input_hw=tuple(input_hw))
    config.validate()
    H, W = config.input_hw
    w, dpt, hd, e = config.stage_widths, config.stage_depths, config.head_dim, config.expansion
    heads = {3: config.heads[0], 4: config.heads[1]}
    res = config.stage_resolution
    sm = config.resample_softmax

    def npix(s):
        h, ww = res(s)
        return h * ww

    def stage(s):
        if s <= 2:
            return local_block_cost(w[s - 1], e, npix(s))
        return global_local_block_cost(w[s - 1], e, heads[s], hd, res(s))

    def stage_total(s):
        p, m = stage(s)
        return p * dpt[s - 1], m * dpt[s - 1]

    local_or_global = {1: "LocalStage", 2: "LocalStage", 3: "GlobalLocalStage", 4: "GlobalLocalStage"}
    rows = [("Stem", "stem", stem_cost(w[0], H, W))]
    rows.append((local_or_global[1], "enc.s1", stage_total(1)))
    rows.append(("ConvDownsample", "down.s1", conv_down_cost(w[0], w[1], npix(2))))
    rows.append((local_or_global[2], "enc.s2", stage_total(2)))
    rows.append(("AttnDownsample", "down.s2", attn_resample_cost(w[1], w[2], heads[3], hd, res(2), 0.5, sm)))
    rows.append((local_or_global[3], "enc.s3", stage_total(3)))
    rows.append(("AttnDownsample", "down.s3", attn_resample_cost(w[2], w[3], heads[4], hd, res(3), 0.5, sm)))
    rows.append((local_or_global[4], "enc.s4", stage_total(4)))
    rows.append(("AttnUpsample", "up.s4", attn_resample_cost(w[3], w[2], heads[4], hd, res(4), 2, sm)))
    rows.append(("SkipFusion", "skip.s3", skip_cost(w[2], npix(3))))
    rows.append((local_or_global[3], "dec.s3", stage_total(3)))
    rows.append(("AttnUpsample", "up.s3", attn_resample_cost(w[2], w[1], heads[3], hd, res(3), 2, sm)))
    rows.append(("SkipFusion", "skip.s2", skip_cost(w[1], npix(2))))
    rows.append((local_or_global[2], "dec.s2", stage_total(2)))
    rows.append(("ConvUpsample", "up.s2", conv_up_cost(w[1], w[0], npix(1))))
    rows.append(("SkipFusion", "skip.s1", skip_cost(w[0], npix(1))))
    rows.append((local_or_global[1], "dec.s1", stage_total(1)))
    rows.append(("PredictionHead", "head", head_cost(w[0], config.num_classes, H, W)))
    report = CostReport([CostRow(m, p, c[0], c[1] * batch) for m, p, c in rows], (batch, 3, H, W))
    return report


def count_params(model) -> CostReport:
    """Exact scalar counts from a built model, grouped by top-level module path."""
    groups = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        path = parts[0] if parts[0] in ("stem", "head") else ".".join(parts[:2])
        groups[path] = groups.get(path, 0) + int(p.size)
    modules = dict(model.named_modules())
    rows = [CostRow(type(modules[path]).__name__, path, n, 0) for path, n in groups.items()]
    return CostReport(rows, ())


def emit_report(report: CostReport, fmt: str = "text") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in report.rows:
            writer.writerow([r.module, r.path, r.params, r.macs])
        return buf.getvalue().encode("utf-8")
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    header = ["module", "path", "params", "MACs", "GMac", "GFLOPs"]
    body = [[r.module, r.path, f"{r.params:,}", f"{r.macs:,}", f"{r.macs / 1e9:.2f}", f"{2 * r.macs / 1e9:.2f}"]
            for r in report.rows]
    if report.rows:
        body.append(["total", "", f"{report.total_params:,}", f"{report.total_macs:,}",
                     f"{report.gmac:.2f}", f"{2 * report.gmac:.2f}"])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]

    def fmt_row(row):
        return "  ".join(cell.rjust(wd) for cell, wd in zip(row, widths))

    lines = [fmt_row(header)]
    if report.rows:
        lines.append("  ".join("-" * wd for wd in widths))
        lines += [fmt_row(r) for r in body]
        if report.input_shape:
            lines.append(f"input shape {'x'.join(str(v) for v in report.input_shape)}")
        lines.append(FOOTER)
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_csv_report(data: bytes) -> CostReport:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    return CostReport([CostRow(m, p, int(a), int(b)) for m, p, a, b in reader])
