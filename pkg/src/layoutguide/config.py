"""JSON config files mirroring the dataclass field names."""

from __future__ import annotations

import dataclasses
import json
import typing
from pathlib import Path

from .guidance import GuidanceConfig
from .sampling import SamplingConfig
from .scheduler import SampleConfig, TrainConfig
from .shapes import DatasetSpec

SECTIONS = {"guidance": GuidanceConfig, "sample": SampleConfig, "train": TrainConfig}


def from_dict(cls, data: dict):
    """Build dataclass ``cls`` from ``data``, recursing into nested dataclasses."""
    if not isinstance(data, dict):
        raise ValueError(f"{cls.__name__} config must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    hints = typing.get_type_hints(cls)
    kw = {}
    for name, value in data.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kw[name] = from_dict(tp, value)
        elif isinstance(value, list):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    return cls(**kw)


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def load_config(path=None) -> dict:
    """Return {"guidance": GuidanceConfig, "sample": SampleConfig, "train": TrainConfig}."""
    raw = {} if path is None else json.loads(Path(path).read_text())
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return {name: from_dict(cls, raw.get(name, {})) for name, cls in SECTIONS.items()}


__all__ = ["from_dict", "to_dict", "load_config", "DatasetSpec", "SamplingConfig"]
