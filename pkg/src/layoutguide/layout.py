"""Bounding boxes, attention-grid masks and layout files.

Layout file schema (JSON, unknown keys rejected)::

    {
      "prompt": [1, 2, 4, 10, 3, 2, 6, 11],
      "entries": [
        {"token_index": 2, "box": [0.0, 0.0, 0.5, 1.0], "label": "red square"},
        {"token_index": 6, "box": [0.5, 0.0, 1.0, 1.0], "label": "blue circle"}
      ]
    }

Coordinates are normalized to [0, 1] with (x0, y0) the top-left corner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class LayoutError(ValueError):
    """Base class for layout validation failures."""


class MalformedLayoutError(LayoutError):
    pass


class CoordinateError(LayoutError):
    pass


class DuplicateTokenError(LayoutError):
    pass


class TokenIndexError(LayoutError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise CoordinateError(f"non-finite box coordinates {vals}")
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise CoordinateError(f"box {vals} violates 0 <= x0 < x1 <= 1, 0 <= y0 < y1 <= 1")

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def rasterize(box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Binary mask of length ``height * width`` (row-major) for ``box``.

    A cell is set when its center falls in the half-open box. If no center
    does, the cell holding the box center is set so the mask is never empty.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"grid extents must be positive, got {height}x{width}")
    cy = (np.arange(height) + 0.5) / height
    cx = (np.arange(width) + 0.5) / width
    rows = (cy >= box.y0) & (cy < box.y1)
    cols = (cx >= box.x0) & (cx < box.x1)
    mask = (rows[:, None] & cols[None, :]).astype(np.float64)
    if not mask.any():
        r = min(int((box.y0 + box.y1) / 2 * height), height - 1)
        c = min(int((box.x0 + box.x1) / 2 * width), width - 1)
        mask[r, c] = 1.0
    return mask.reshape(-1)


def complement(mask: np.ndarray) -> np.ndarray:
    return 1.0 - np.asarray(mask, dtype=np.float64)


@dataclass(frozen=True)
class LayoutEntry:
    token_index: int
    box: BoundingBox
    label: str = ""


@dataclass(frozen=True)
class Layout:
    prompt: tuple[int, ...]
    entries: tuple[LayoutEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise MalformedLayoutError("layout needs at least one entry")
        seen = set()
        for e in self.entries:
            if not 0 <= e.token_index < len(self.prompt):
                raise TokenIndexError(
                    f"token_index {e.token_index} outside prompt of length {len(self.prompt)}"
                )
            if e.token_index in seen:
                raise DuplicateTokenError(f"token_index {e.token_index} used twice")
            seen.add(e.token_index)

    @property
    def token_indices(self) -> list[int]:
        return [e.token_index for e in self.entries]

    @property
    def boxes(self) -> list[BoundingBox]:
        return [e.box for e in self.entries]

    def masks(self, height: int, width: int) -> np.ndarray:
        """Stacked (N, H*W) masks, one row per entry."""
        return np.stack([rasterize(e.box, height, width) for e in self.entries])

    def to_dict(self) -> dict:
        return {
            "prompt": list(self.prompt),
            "entries": [
                {"token_index": e.token_index, "box": e.box.as_list(), "label": e.label}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, obj) -> "Layout":
        if not isinstance(obj, dict):
            raise MalformedLayoutError("layout must be a JSON object")
        extra = set(obj) - {"prompt", "entries"}
        if extra:
            raise MalformedLayoutError(f"unknown layout fields: {sorted(extra)}")
        try:
            prompt = obj["prompt"]
            raw_entries = obj["entries"]
        except KeyError as exc:
            raise MalformedLayoutError(f"missing field {exc}") from None
        if not isinstance(prompt, list) or not all(_is_int(t) for t in prompt):
            raise MalformedLayoutError("prompt must be a list of integer token ids")
        if not isinstance(raw_entries, list):
            raise MalformedLayoutError("entries must be a list")
        entries = []
        for raw in raw_entries:
            if not isinstance(raw, dict):
                raise MalformedLayoutError("each entry must be an object")
            extra = set(raw) - {"token_index", "box", "label"}
            if extra:
                raise MalformedLayoutError(f"unknown entry fields: {sorted(extra)}")
            if "token_index" not in raw or "box" not in raw:
                raise MalformedLayoutError("entry needs token_index and box")
            idx, box, label = raw["token_index"], raw["box"], raw.get("label", "")
            if not _is_int(idx):
                raise MalformedLayoutError("token_index must be an integer")
            if (
                not isinstance(box, list)
                or len(box) != 4
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box)
            ):
                raise MalformedLayoutError("box must be four numbers [x0, y0, x1, y1]")
            if not isinstance(label, str):
                raise MalformedLayoutError("label must be a string")
            entries.append(LayoutEntry(idx, BoundingBox(*map(float, box)), label))
        return cls(tuple(prompt), tuple(entries))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def load_layout(path) -> Layout:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedLayoutError(f"cannot read layout {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedLayoutError(f"{path}: invalid JSON ({exc})") from exc
    return Layout.from_dict(obj)


def dump_layout(layout: Layout, path) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), indent=2) + "\n")
