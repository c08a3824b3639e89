"""Synthetic two-class glyph images with an optional planted color shortcut.

Class 0 is a vehicle glyph (rounded-rectangle body over two dark wheels),
class 1 a sign glyph (regular octagon on a dark pole). In ``biased`` mode the
painted body is always red for vehicles and blue for signs, so color alone
separates the training data. In ``balanced`` mode either class picks red or
blue with equal odds and only the shape carries the label.

Image ``i`` has label ``i % 2`` and draws its randomness from its own stream
derived from ``(seed, i)``. A set of size ``n`` is therefore a prefix of any
larger set with the same seed and mode. All pixel values are multiples of
1/255, so PPM round trips are lossless.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .rng import MASK64, XorShift64Star

MODES = ("biased", "balanced")
CLASS_NAMES = ("vehicle", "sign")
WHEEL_GRAY = 0.15
POLE_GRAY = 0.25


@dataclass(eq=False)
class LabeledImageSet:
    images: np.ndarray  # N x S x S x 3 float32
    labels: np.ndarray  # N int64
    masks: np.ndarray  # N x S x S bool, painted glyph body
    mode: str
    seed: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    def subset(self, start: int, stop: int) -> "LabeledImageSet":
        return LabeledImageSet(
            self.images[start:stop], self.labels[start:stop], self.masks[start:stop], self.mode, self.seed
        )


def _fill_color(rng: XorShift64Star, red: bool) -> tuple[float, float, float]:
    strong = rng.uniform(0.7, 1.0)
    weak1 = rng.uniform(0.0, 0.2)
    weak2 = rng.uniform(0.0, 0.2)
    return (strong, weak1, weak2) if red else (weak2, weak1, strong)


def _q(v: float) -> float:
    return math.floor(v * 255.0 + 0.5) / 255.0


def render_glyph(label: int, side: int, rng: XorShift64Star, mode: str):
    """Return (image, body mask, fill is red) for one glyph."""
    background = rng.uniform(0.6, 0.9)
    dx = rng.uniform(-0.1, 0.1) * side
    dy = rng.uniform(-0.1, 0.1) * side
    unit = side * rng.uniform(0.85, 1.15)
    band = rng.uniform()
    red = (label == 0) if mode == "biased" else band < 0.5
    fill = _fill_color(rng, red)

    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    cx, cy = side / 2 + dx, side / 2 + dy

    if label == 0:
        bx, by = cx, cy - 0.05 * unit
        half_w, half_h, radius = 0.30 * unit, 0.14 * unit, 0.06 * unit
        qx = np.abs(xs - bx) - (half_w - radius)
        qy = np.abs(ys - by) - (half_h - radius)
        body = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0)) <= radius
        wheel_y = by + half_h
        wheel_r = 0.08 * unit
        dark = np.zeros_like(body)
        for wx in (cx - 0.17 * unit, cx + 0.17 * unit):
            dark |= np.hypot(xs - wx, ys - wheel_y) <= wheel_r
        dark_gray = WHEEL_GRAY
    else:
        ox, oy = cx, cy - 0.12 * unit
        apothem = 0.2 * unit * math.cos(math.pi / 8)
        ax, ay = np.abs(xs - ox), np.abs(ys - oy)
        body = (ax <= apothem) & (ay <= apothem) & (ax + ay <= apothem * math.sqrt(2))
        dark = (np.abs(xs - ox) <= 0.03 * unit) & (ys >= oy) & (ys <= cy + 0.35 * unit)
        dark_gray = POLE_GRAY

    image = np.full((side, side, 3), _q(background), dtype=np.float64)
    image[dark & ~body] = _q(dark_gray)
    image[body] = [_q(c) for c in fill]
    return image.astype(np.float32), body, red


def generate_dataset(n: int, mode: str, input_side: int, seed: int) -> LabeledImageSet:
    if n <= 0 or n % 2:
        raise ValueError(f"n must be a positive even number, got {n}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if input_side < 32:
        raise ValueError(f"input_side must be at least 32, got {input_side}")
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    images = np.empty((n, input_side, input_side, 3), dtype=np.float32)
    masks = np.empty((n, input_side, input_side), dtype=bool)
    labels = np.arange(n, dtype=np.int64) % 2
    for i in range(n):
        images[i], masks[i], _ = render_glyph(int(labels[i]), input_side, XorShift64Star.for_stream(seed, i), mode)
    return LabeledImageSet(images, labels, masks, mode, seed)


def fill_is_red(dataset: LabeledImageSet, index: int) -> bool:
    body = dataset.images[index][dataset.masks[index]]
    return bool(body[:, 0].mean() > body[:, 2].mean())


def glyph_mask(image_index: int, dataset: LabeledImageSet) -> np.ndarray:
    """Boolean S x S mask of the painted glyph body of one image."""
    if not 0 <= image_index < len(dataset):
        raise IndexError(f"image index {image_index} out of range for {len(dataset)} images")
    return dataset.masks[image_index].copy()


# ---------------------------------------------------------------- disk layout


def image_filename(index: int) -> str:
    return f"img_{index:05d}.ppm"


def write_dataset(dataset: LabeledImageSet, out_dir) -> None:
    """Write PPM images, ``.mask.pgm`` masks, ``labels.csv`` and ``dataset.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["filename", "label"])
    for i in range(len(dataset)):
        name = image_filename(i)
        pnm.write_ppm(out / name, dataset.images[i])
        pnm.write_pgm(out / name.replace(".ppm", ".mask.pgm"), dataset.masks[i])
        writer.writerow([name, int(dataset.labels[i])])
    (out / "labels.csv").write_text(buf.getvalue(), encoding="utf-8")
    meta = {"mode": dataset.mode, "seed": dataset.seed, "n": len(dataset), "side": dataset.side,
            "class_names": list(CLASS_NAMES)}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def read_dataset(data_dir) -> LabeledImageSet:
    data_dir = Path(data_dir)
    labels_path = data_dir / "labels.csv"
    if not labels_path.exists():
        raise FileNotFoundError(f"{labels_path} not found")
    with labels_path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{labels_path} lists no images")
    images, masks, labels = [], [], []
    for row in rows:
        img = pnm.read_ppm(data_dir / row["filename"])
        images.append(img)
        labels.append(int(row["label"]))
        mask_path = data_dir / row["filename"].replace(".ppm", ".mask.pgm")
        if mask_path.exists():
            masks.append(pnm.read_pgm(mask_path) >= 128)
        else:
            masks.append(np.zeros(img.shape[:2], dtype=bool))
    meta_path = data_dir / "dataset.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return LabeledImageSet(
        np.stack(images), np.array(labels, dtype=np.int64), np.stack(masks),
        meta.get("mode", "unknown"), int(meta.get("seed", 0)),
    )
