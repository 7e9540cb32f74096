"""Cross- and self-attention layout constraints.

All losses take a :class:`ConstraintInput` whose attention maps may be
recorded tensors; masks are constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tn
from .tensor import Tensor

EPS = 1e-12


@dataclass
class ConstraintInput:
    """Attention maps and masks for N attending tokens over L locations.

    ``cross`` is (N, L), ``self_attn`` is (L, L) with query rows. ``inside``
    and ``outside`` are the sampled masks of the region and its complement;
    ``self_inside`` / ``self_outside`` are the ones used by the self-attention
    term (default: the cross ones).
    """

    cross: Tensor
    masks: np.ndarray
    inside: np.ndarray
    outside: np.ndarray
    self_attn: Tensor | None = None
    self_inside: np.ndarray | None = None
    self_outside: np.ndarray | None = None
    margin: float = 0.1
    margin_mode: str = "aggregate"

    def __post_init__(self):
        self.cross = tn.as_tensor(self.cross)
        if self.self_attn is not None:
            self.self_attn = tn.as_tensor(self.self_attn)
        self.masks = np.asarray(self.masks, dtype=np.float64)
        self.inside = np.asarray(self.inside, dtype=np.float64)
        self.outside = np.asarray(self.outside, dtype=np.float64)
        if self.cross.ndim != 2 or self.cross.shape[0] < 1:
            raise ValueError(f"cross maps must be (N>=1, L), got {self.cross.shape}")
        for name in ("masks", "inside", "outside"):
            if getattr(self, name).shape != self.cross.shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {self.cross.shape}")
        if self.margin_mode not in ("aggregate", "elementwise"):
            raise ValueError(f"unknown margin mode {self.margin_mode!r}")

    @property
    def n(self) -> int:
        return self.cross.shape[0]


def _ratio_loss(values: Tensor, inside: np.ndarray, outside: np.ndarray) -> Tensor:
    inner = (values * inside).sum(axis=-1)
    outer = (values * outside).sum(axis=-1)
    share = inner / (inner + outer + EPS)
    return ((1.0 - share) ** 2).sum()


def intra_loss(inp: ConstraintInput) -> Tensor:
    """Squared shortfall of each token's sampled in-region attention share."""
    return _ratio_loss(inp.cross, inp.inside, inp.outside)


def inter_max(inp: ConstraintInput, i: int) -> Tensor:
    """Per-location max over the other tokens' attention inside token i's sampled region."""
    if inp.n == 1:
        return Tensor(np.zeros(inp.cross.shape[1]))
    others = [inp.cross[j] * inp.inside[i] for j in range(inp.n) if j != i]
    if len(others) == 1:
        return others[0]
    return tn.stack(others).max(axis=0)


def inter_margins(inp: ConstraintInput) -> Tensor:
    """Differences d_i between own and strongest competing in-region mass, minus the margin."""
    L = inp.cross.shape[1]
    offset = inp.margin * (L if inp.margin_mode == "elementwise" else 1)
    own = (inp.cross * inp.inside).sum(axis=1)
    rival = tn.stack([inter_max(inp, i).sum() for i in range(inp.n)])
    return own - rival - offset


def inter_loss(inp: ConstraintInput) -> Tensor:
    if inp.n == 1:
        return Tensor(0.0)
    d = inter_margins(inp)
    return (tn.relu(-d) ** 2).sum()


def self_aggregate(S, mask) -> Tensor:
    """Sum of the self-attention rows whose query lies in ``mask``."""
    return tn.matmul(np.asarray(mask, dtype=np.float64).reshape(1, -1), tn.as_tensor(S)).reshape(-1)


def self_maps(inp: ConstraintInput) -> Tensor:
    """(N, L) aggregated self-attention for every entry's full mask."""
    return tn.matmul(inp.masks, inp.self_attn)


def self_loss(inp: ConstraintInput) -> Tensor:
    if inp.self_attn is None:
        raise ValueError("self-attention loss needs a self-attention map")
    inside = inp.inside if inp.self_inside is None else inp.self_inside
    outside = inp.outside if inp.self_outside is None else inp.self_outside
    return _ratio_loss(self_maps(inp), inside, outside)


COMPONENTS = ("intra", "inter", "self")


def loss_components(inp: ConstraintInput, use=COMPONENTS) -> dict[str, Tensor]:
    fns = {"intra": intra_loss, "inter": inter_loss, "self": self_loss}
    return {name: fns[name](inp) for name in COMPONENTS if name in use}


def total_loss(inp: ConstraintInput, use=COMPONENTS) -> Tensor:
    """Unweighted sum of the enabled components."""
    parts = list(loss_components(inp, use).values())
    if not parts:
        return Tensor(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


class LossLog:
    """Append per-step loss components to a CSV file."""

    header = ["step", "t", "intra", "inter", "self"]

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(self.header)

    def append(self, step: int, t: int, parts: dict[str, float]) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([step, t] + [repr(float(parts.get(k, 0.0))) for k in COMPONENTS])
