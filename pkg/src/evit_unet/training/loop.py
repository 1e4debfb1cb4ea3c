"""Training and evaluation over in-memory sample lists."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..core.tensor import Tensor, backward, no_grad
from ..errors import InvalidArg
from .losses import combined_loss
from .metrics import MetricReport, confusion_counts
from .sgd import SGD

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,train_loss,eval_mean_dsc,eval_mean_iou"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval: MetricReport
    seconds: float = 0.0

    def csv_row(self) -> str:
        return f"{self.epoch},{self.train_loss:.6f},{self.eval.mean_dsc:.6f},{self.eval.mean_iou:.6f}"


@dataclass
class History:
    records: List[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        return "\n".join([HISTORY_HEADER] + [r.csv_row() for r in self.records]) + "\n"

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def stack_batch(samples, dtype):
    images = np.stack([s.image for s in samples]).astype(dtype)
    masks = np.stack([s.mask for s in samples])
    return Tensor._wrap(images), masks


def evaluate(model, samples, batch_size: int = 8, ce_weight: float = 0.5, dice_weight: float = 0.5) -> MetricReport:
    """No-grad eval-mode forward, argmax, dataset-pooled per-class DSC/IoU."""
    if not samples:
        raise InvalidArg("cannot evaluate on an empty dataset")
    K = model.config.num_classes
    inter = np.zeros(K, dtype=np.int64)
    n_pred = np.zeros(K, dtype=np.int64)
    n_true = np.zeros(K, dtype=np.int64)
    loss_sum = 0.0
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            x, masks = stack_batch(chunk, model.dtype)
            logits = model(x, "eval")
            loss_sum += combined_loss(logits, masks, ce_weight, dice_weight).item() * len(chunk)
            pred = logits.data.argmax(axis=1)
            i, p, t = confusion_counts(pred, masks, K)
            inter += i
            n_pred += p
            n_true += t
    return MetricReport.from_counts(inter, n_pred, n_true, loss_sum / len(samples))


def predict_masks(model, images: np.ndarray, batch_size: int = 8):
    """Returns (logits [B,K,H,W], argmax masks [B,H,W])."""
    outs = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = Tensor._wrap(np.ascontiguousarray(images[start:start + batch_size], dtype=model.dtype))
            outs.append(model(x, "eval").data)
    logits = np.concatenate(outs)
    return logits, logits.argmax(axis=1)


def _batches(order, batch_size):
    """Consecutive slices of ``order``; a trailing single sample joins the previous batch,
    since train-mode batch norm has no variance over one sample at a 1x1 stage."""
    starts = list(range(0, len(order), batch_size))
    if len(starts) > 1 and len(order) - starts[-1] == 1:
        starts.pop()
    return [order[a:b] for a, b in zip(starts, starts[1:] + [len(order)])]


def train(model, train_set, eval_set, sgd: SGD, epochs: int, batch_size: int = 8, seed: int = 0,
          ce_weight: float = 0.5, dice_weight: float = 0.5, on_epoch=None) -> History:
    """Seeded-shuffle minibatch SGD; one eval pass over ``eval_set`` per epoch."""
    if not train_set:
        raise InvalidArg("training set is empty")
    rng = np.random.default_rng(seed)
    history = History()
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for chunk in _batches(order, batch_size):
            batch = [train_set[i] for i in chunk]
            x, masks = stack_batch(batch, model.dtype)
            loss = combined_loss(model(x, "train"), masks, ce_weight, dice_weight)
            backward(loss)
            sgd.step()
            sgd.zero_grad()
            total += loss.item() * len(batch)
            count += len(batch)
        report = evaluate(model, eval_set if eval_set else train_set, batch_size, ce_weight, dice_weight)
        rec = EpochRecord(epoch, total / count, report, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d loss %.4f eval mDSC %.4f mIoU %.4f (%.1fs)", epoch, rec.train_loss,
                 report.mean_dsc, report.mean_iou, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    return history
