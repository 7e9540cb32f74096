"""Localization metrics: attention mass inside boxes and color-segment centroids."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .layout import Layout
from .vocab import COLORS, color_of

log = logging.getLogger(__name__)

SEGMENT_THRESHOLD = 0.25


def attention_in_box(maps, layout: Layout, height: int, width: int) -> np.ndarray:
    """Fraction of each entry's attention that falls inside its box.

    ``maps`` is (N, L) or an AttentionRecord.
    """
    if hasattr(maps, "token_maps"):
        maps = maps.token_maps(layout.token_indices).data
    A = np.asarray(maps, dtype=np.float64)
    masks = layout.masks(height, width)
    if A.shape != masks.shape:
        raise ValueError(f"attention maps {A.shape} do not match layout masks {masks.shape}")
    total = A.sum(axis=1)
    if (total <= 0).any():
        log.warning("zero total attention for some entries; reporting mass 0")
    return np.divide((A * masks).sum(axis=1), total, out=np.zeros_like(total), where=total > 0)


def segment(image: np.ndarray, palette: dict[str, tuple], threshold: float = SEGMENT_THRESHOLD):
    """Label map: index into ``list(palette)`` of the nearest color, or -1 for background."""
    img = np.asarray(image, dtype=np.float64)
    protos = np.array(list(palette.values()), dtype=np.float64)
    dist = np.linalg.norm(img[:, :, None, :] - protos[None, None], axis=-1)
    labels = dist.argmin(axis=-1)
    labels[dist.min(axis=-1) > threshold] = -1
    return labels


def centroid_in_box(image, layout: Layout, palette: dict[str, tuple] | None = None,
                    threshold: float = SEGMENT_THRESHOLD) -> np.ndarray:
    """Per entry: does the centroid of its color segment fall inside its box?"""
    palette = palette or COLORS
    names = list(palette)
    labels = segment(image, palette, threshold)
    h, w = labels.shape
    flags = []
    for e in layout.entries:
        color = color_of(e.label) if color_of(e.label) else e.label
        if color not in palette:
            raise KeyError(f"entry label {e.label!r} has no palette color")
        rr, cc = np.nonzero(labels == names.index(color))
        if rr.size == 0:
            flags.append(False)
            continue
        cy, cx = (rr + 0.5).mean() / h, (cc + 0.5).mean() / w
        flags.append(e.box.contains_point(cx, cy))
    return np.array(flags, dtype=bool)


@dataclass
class LocalizationReport:
    masses: list[list[float]] = field(default_factory=list)  # per seed, per entry
    centroid_flags: list[list[bool]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    guided_masses: list[float] = field(default_factory=list)  # mean over guided steps, per seed

    def add(self, seed: int, masses, flags, seconds: float, guided_mass: float = float("nan")):
        self.seeds.append(int(seed))
        self.masses.append([float(m) for m in masses])
        self.centroid_flags.append([bool(f) for f in flags])
        self.seconds.append(float(seconds))
        self.guided_masses.append(float(guided_mass))

    @property
    def seed_count(self) -> int:
        return len(self.seeds)

    @property
    def mean_mass(self) -> float:
        vals = [m for row in self.masses for m in row]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def centroid_rate(self) -> float:
        vals = [f for row in self.centroid_flags for f in row]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.seconds)) if self.seconds else 0.0

    def summary(self) -> dict:
        return {"seed_count": self.seed_count, "mean_attention_in_box": self.mean_mass,
                "centroid_in_box_rate": self.centroid_rate, "seconds_per_image": self.mean_seconds}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"summary": self.summary(), **asdict(self)}, indent=1))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["seed", "entry", "attention_in_box", "centroid_in_box", "seconds"])
            for seed, ms, fs, sec in zip(self.seeds, self.masses, self.centroid_flags, self.seconds):
                for k, (m, f) in enumerate(zip(ms, fs)):
                    wr.writerow([seed, k, repr(m), int(f), f"{sec:.3f}"])
