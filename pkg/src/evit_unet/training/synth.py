"""Synthetic shape-segmentation data and its on-disk form.

Class 0 is background. Foreground class ``k`` has a fixed shape kind
(ellipse, rectangle, annulus, cycling) and a fixed hue; each instance gets a
random position, size and brightness. Objects are placed without bounding-box
overlap where possible (100 tries), otherwise later objects are drawn on top.

On disk a dataset is a directory of EVT1 tensors plus ``manifest.tsv`` with
``id<TAB>image<TAB>mask`` rows (paths relative to the directory). Masks are
stored as f32 label maps.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from ..core import container
from ..errors import CorruptFile, InvalidArg

SHAPES = ("ellipse", "rectangle", "annulus")
NOISE_SIGMA = 0.05
MAX_TRIES = 100
MANIFEST = "manifest.tsv"


@dataclass
class SynthSample:
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    mask: np.ndarray  # [H, W] int64 labels


def class_color(k: int, K: int) -> np.ndarray:
    hue = (k - 1) / (K - 1)
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 1.0))


def _shape_mask(kind, H, W, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:H, 0:W]
    dy, dx = (yy - cy) / ry, (xx - cx) / rx
    if kind == "ellipse":
        return dy ** 2 + dx ** 2 <= 1.0
    if kind == "rectangle":
        return (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)
    r2 = dy ** 2 + dx ** 2
    return (r2 <= 1.0) & (r2 >= 0.5 ** 2)


def _overlaps(box, boxes):
    y0, x0, y1, x1 = box
    return any(not (y1 < b[0] or b[2] < y0 or x1 < b[1] or b[3] < x0) for b in boxes)


def generate_sample(rng: np.random.Generator, H: int, W: int, K: int, required: int) -> SynthSample:
    classes = [k for k in range(1, K) if k == required or rng.random() < 0.6]
    rng.shuffle(classes)
    bg = rng.uniform(0.05, 0.35)
    image = np.full((3, H, W), bg)
    mask = np.zeros((H, W), dtype=np.int64)
    boxes = []
    lo, hi = 0.12 * min(H, W), 0.24 * min(H, W)
    for k in classes:
        kind = SHAPES[(k - 1) % len(SHAPES)]
        for _ in range(MAX_TRIES):
            ry, rx = rng.uniform(lo, hi, size=2)
            if kind == "annulus":
                rx = ry
            cy = rng.uniform(ry, H - 1 - ry)
            cx = rng.uniform(rx, W - 1 - rx)
            box = (cy - ry - 1, cx - rx - 1, cy + ry + 1, cx + rx + 1)
            if not _overlaps(box, boxes):
                break
        boxes.append(box)
        region = _shape_mask(kind, H, W, cy, cx, ry, rx)
        color = class_color(k, K) * rng.uniform(0.7, 1.0)
        image[:, region] = color[:, None]
        mask[region] = k
    image += rng.normal(0.0, NOISE_SIGMA, size=image.shape)
    return SynthSample(np.clip(image, 0.0, 1.0).astype(np.float32), mask)


def generate_synth_dataset(n: int, H: int, W: int, K: int, seed: int = 0) -> List[SynthSample]:
    """``n`` samples; sample ``i`` always contains class ``1 + i % (K-1)``."""
    if K < 2:
        raise InvalidArg(f"need at least 2 classes, got {K}")
    if n < 1:
        raise InvalidArg(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    return [generate_sample(rng, H, W, K, 1 + i % (K - 1)) for i in range(n)]


def split_dataset(samples: list, seed: int = 0):
    """Deterministic 80/20 split: every fifth position of a seeded permutation is held out."""
    order = np.random.default_rng(seed).permutation(len(samples))
    train = [samples[i] for p, i in enumerate(order) if p % 5 != 4]
    held = [samples[i] for p, i in enumerate(order) if p % 5 == 4]
    return train, held


def save_dataset(samples: list, directory: Union[str, Path]) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = ["id\timage\tmask"]
    for i, s in enumerate(samples):
        img_name, mask_name = f"{i:05d}_image.evt", f"{i:05d}_mask.evt"
        container.save(d / img_name, s.image.astype(np.float32))
        container.save(d / mask_name, s.mask.astype(np.float32))
        rows.append(f"{i:05d}\t{img_name}\t{mask_name}")
    (d / MANIFEST).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return d


def load_dataset(directory: Union[str, Path]) -> List[SynthSample]:
    d = Path(directory)
    if d.is_dir() and not any(d.iterdir()):
        return []  # an empty directory is an empty dataset, not a broken one
    lines = (d / MANIFEST).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["id", "image", "mask"]:
        raise CorruptFile(f"{d / MANIFEST}: missing id/image/mask header")
    samples = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorruptFile(f"{d / MANIFEST}: malformed row {line!r}")
        image = container.load(d / parts[1]).astype(np.float32)
        mask = container.load(d / parts[2])
        samples.append(SynthSample(image, np.rint(mask).astype(np.int64)))
    return samples
