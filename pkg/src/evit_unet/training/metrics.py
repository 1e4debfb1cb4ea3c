"""Overlap metrics from per-class confusion counts.

A class absent from both prediction and truth scores 1.0 for DSC and IoU.
Dataset-level metrics pool the counts over all samples before dividing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_counts(pred: np.ndarray, true: np.ndarray, K: int):
    """Per-class (intersection, |pred|, |true|) as int64 arrays of length K."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    true = np.asarray(true).reshape(-1).astype(np.int64)
    inter = np.bincount(true[pred == true], minlength=K)[:K]
    n_pred = np.bincount(pred, minlength=K)[:K]
    n_true = np.bincount(true, minlength=K)[:K]
    return inter, n_pred, n_true


def dsc_from_counts(inter, n_pred, n_true) -> np.ndarray:
    inter, n_pred, n_true = (np.asarray(a, dtype=np.float64) for a in (inter, n_pred, n_true))
    denom = n_pred + n_true
    return np.where(denom == 0, 1.0, 2.0 * inter / np.where(denom == 0, 1.0, denom))


def iou_from_counts(inter, n_pred, n_true) -> np.ndarray:
    inter, n_pred, n_true = (np.asarray(a, dtype=np.float64) for a in (inter, n_pred, n_true))
    union = n_pred + n_true - inter
    return np.where(union == 0, 1.0, inter / np.where(union == 0, 1.0, union))


def dsc_metric(pred, true, K: int) -> np.ndarray:
    return dsc_from_counts(*confusion_counts(pred, true, K))


def iou_metric(pred, true, K: int) -> np.ndarray:
    return iou_from_counts(*confusion_counts(pred, true, K))


@dataclass
class MetricReport:
    dsc: np.ndarray
    iou: np.ndarray
    loss: float = float("nan")

    @property
    def mean_dsc(self) -> float:
        """Mean over foreground classes (class 0 is background)."""
        return float(np.mean(self.dsc[1:]))

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou[1:]))

    @classmethod
    def from_counts(cls, inter, n_pred, n_true, loss=float("nan")) -> "MetricReport":
        return cls(dsc_from_counts(inter, n_pred, n_true), iou_from_counts(inter, n_pred, n_true), loss)

    def to_text(self) -> str:
        lines = [f"{'class':>5} {'DSC':>8} {'IoU':>8}"]
        for k, (d, i) in enumerate(zip(self.dsc, self.iou)):
            lines.append(f"{k:>5} {d:8.4f} {i:8.4f}")
        lines.append(f"mean DSC (foreground) {self.mean_dsc:.4f}")
        lines.append(f"mean IoU (foreground) {self.mean_iou:.4f}")
        if not np.isnan(self.loss):
            lines.append(f"loss {self.loss:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["class,dsc,iou"]
        rows += [f"{k},{d:.6f},{i:.6f}" for k, (d, i) in enumerate(zip(self.dsc, self.iou))]
        rows.append(f"mean_foreground,{self.mean_dsc:.6f},{self.mean_iou:.6f}")
        return "\n".join(rows) + "\n"
