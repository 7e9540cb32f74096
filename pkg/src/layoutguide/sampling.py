"""Selective sampling: keep a random subset of the strongest in-region values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    top_fraction: float = 0.8  # K
    keep_fraction: float = 0.5  # M
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.top_fraction <= 1:
            raise ValueError(f"top_fraction must lie in (0, 1], got {self.top_fraction}")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")


def top_count(n: int, top_fraction: float) -> int:
    # the epsilon absorbs float noise such as 0.7 * 10 == 7.000000000000001
    return min(n, max(1, math.ceil(top_fraction * n - 1e-9)))


def keep_count(k: int, keep_fraction: float) -> int:
    """Round half up, never below one."""
    return max(1, math.floor(keep_fraction * k + 0.5))


def ranked_indices(values: np.ndarray, region: np.ndarray) -> np.ndarray:
    """In-region indices sorted by value descending, ties by lower index."""
    idx = np.flatnonzero(region)
    order = np.argsort(-values[idx], kind="stable")
    return idx[order]


def selective_sample(values, region, cfg: SamplingConfig, rng: np.random.Generator) -> np.ndarray:
    """Binary mask with ``keep_count(top_count(n))`` cells drawn from the top of ``region``."""
    values = np.asarray(values, dtype=np.float64)
    region = np.asarray(region)
    if values.shape != region.shape or values.ndim != 1:
        raise ValueError(f"values {values.shape} and region {region.shape} must be equal 1-D shapes")
    if not np.isfinite(values).all():
        raise ValueError("values must be finite")
    ranked = ranked_indices(values, region)
    if ranked.size == 0:
        raise EmptyRegionError("selective sampling needs a non-empty region")
    top = ranked[: top_count(ranked.size, cfg.top_fraction)]
    chosen = rng.choice(top, size=keep_count(top.size, cfg.keep_fraction), replace=False)
    out = np.zeros_like(values)
    out[chosen] = 1.0
    return out


def step_rng(seed: int, counter: int) -> np.random.Generator:
    """Independent stream for refinement step ``counter`` under ``seed``."""
    return np.random.default_rng([seed, counter])
