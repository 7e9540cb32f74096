"""Procedural colored-shapes dataset with captions and ground-truth boxes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .layout import BoundingBox, Layout, LayoutEntry
from .vocab import COLORS, SHAPES, tokenize


@dataclass(frozen=True)
class DatasetSpec:
    image_size: int = 32
    shapes: tuple[str, ...] = SHAPES
    colors: tuple[str, ...] = tuple(COLORS)
    min_objects: int = 1
    max_objects: int = 3
    min_size: int = 8
    max_size: int = 14
    n_ctx: int = 16

    def __post_init__(self):
        if self.image_size <= 0 or self.min_size <= 0 or self.max_size < self.min_size:
            raise ValueError("dataset extents must be positive")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("object counts must satisfy 1 <= min <= max")


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    tokens: list[int]
    caption: str
    boxes: list[BoundingBox]
    labels: list[str]
    # prompt positions of each object's color and shape words
    color_positions: list[int] = field(default_factory=list)
    shape_positions: list[int] = field(default_factory=list)

    def layout(self, attend: str = "color") -> Layout:
        pos = self.color_positions if attend == "color" else self.shape_positions
        return Layout(tuple(self.tokens),
                      tuple(LayoutEntry(p, b, l) for p, b, l in zip(pos, self.boxes, self.labels)))


def shape_mask(kind: str, x: int, y: int, s: int, size: int) -> np.ndarray:
    """Boolean (size, size) mask of a shape inscribed in the square at (x, y) with side s."""
    rr, cc = np.mgrid[0:size, 0:size]
    py, px = rr + 0.5, cc + 0.5
    if kind == "square":
        return (px >= x) & (px < x + s) & (py >= y) & (py < y + s)
    if kind == "circle":
        r = s / 2
        return (px - x - r) ** 2 + (py - y - r) ** 2 <= r * r
    if kind == "triangle":
        v = (py - y) / s
        half = v * s / 2
        return (v >= 0) & (v < 1) & (np.abs(px - (x + s / 2)) <= half)
    raise ValueError(f"unknown shape {kind!r}")


def tight_box(mask: np.ndarray) -> BoundingBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    h, w = mask.shape
    return BoundingBox(cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h)


def _overlaps(a, b, gap: int = 1) -> bool:
    ax, ay, asz = a
    bx, by, bsz = b
    return not (ax + asz + gap <= bx or bx + bsz + gap <= ax or ay + asz + gap <= by or by + bsz + gap <= ay)


def make_sample(rng: np.random.Generator, spec: DatasetSpec, n_objects: int | None = None) -> Sample:
    size = spec.image_size
    n = n_objects or int(rng.integers(spec.min_objects, spec.max_objects + 1))
    colors = rng.choice(len(spec.colors), size=n, replace=False)
    placed: list[tuple[int, int, int]] = []
    while len(placed) < n:
        s = int(rng.integers(spec.min_size, spec.max_size + 1))
        cand = (int(rng.integers(0, size - s + 1)), int(rng.integers(0, size - s + 1)), s)
        if all(not _overlaps(cand, p) for p in placed):
            placed.append(cand)
        elif rng.random() < 0.02:  # restart when the canvas is crowded
            placed = []
    image = np.zeros((size, size, 3))
    words, boxes, labels, cpos, spos = [], [], [], [], []
    for k, (x, y, s) in enumerate(placed):
        color = spec.colors[colors[k]]
        kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
        m = shape_mask(kind, x, y, s, size)
        image[m] = COLORS[color]
        if words:
            words.append("and")
        words += ["a", color, kind]
        cpos.append(len(words) - 1)  # +1 for BOS, -1 for the shape word
        spos.append(len(words))
        boxes.append(tight_box(m))
        labels.append(f"{color} {kind}")
    caption = " ".join(words)
    return Sample(image, tokenize(caption, spec.n_ctx), caption, boxes, labels, cpos, spos)


def generate_dataset(spec: DatasetSpec, seed: int) -> Iterator[Sample]:
    """Endless deterministic stream of samples for ``seed``."""
    rng = np.random.default_rng(seed)
    while True:
        yield make_sample(rng, spec)


def dump_dataset(samples, out_dir) -> Path:
    """Write samples as PPM images plus ``index.json`` of captions and boxes."""
    from .imageio import write_image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for k, s in enumerate(samples):
        name = f"{k:05d}.ppm"
        write_image(s.image, out / name, "ppm")
        index.append({"file": name, "caption": s.caption, "tokens": s.tokens,
                      "boxes": [b.as_list() for b in s.boxes], "labels": s.labels})
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return out / "index.json"
