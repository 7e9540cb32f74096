"""Latent refinement against the layout constraints, and attention redistribution."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import COMPONENTS, ConstraintInput, loss_components
from .layout import Layout
from .model import (AttentionOverride, AttentionRecord, DenoiserParams, denoise, encode_tokens,
                    latent_to_image)
from .sampling import SamplingConfig, selective_sample, step_rng
from .scheduler import NoiseSchedule, SampleConfig, cfg_combine, initial_latent, sample_step
from .tensor import Tape
from .vocab import empty_prompt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GuidanceConfig:
    refine_steps: int = 5  # T_R
    guided_steps: int = 25  # T_D
    eta0: float = 40.0
    margin: float = 0.1
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    use_intra: bool = True
    use_inter: bool = True
    use_self: bool = True
    selective: bool = True
    redistribute: bool = True
    margin_mode: str = "aggregate"  # or "elementwise"
    norm_mode: str = "token"  # or "global"

    def __post_init__(self):
        if self.guided_steps < 1:
            raise ValueError("guided_steps must be >= 1")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be >= 0")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.norm_mode not in ("token", "global"):
            raise ValueError(f"unknown norm mode {self.norm_mode!r}")

    @property
    def components(self) -> tuple[str, ...]:
        flags = {"intra": self.use_intra, "inter": self.use_inter, "self": self.use_self}
        return tuple(c for c in COMPONENTS if flags[c])

    @property
    def refines(self) -> bool:
        return self.refine_steps > 0 and bool(self.components)

    @classmethod
    def disabled(cls, **kw) -> "GuidanceConfig":
        base = dict(use_intra=False, use_inter=False, use_self=False, redistribute=False)
        base.update(kw)
        return cls(**base)


def eta(step_index: int, cfg: GuidanceConfig) -> float:
    """Linearly decayed step size for guided step ``step_index``."""
    if not 0 <= step_index < cfg.guided_steps:
        raise IndexError(f"step index {step_index} outside [0, {cfg.guided_steps})")
    return cfg.eta0 * (1.0 - step_index / cfg.guided_steps)


def sample_masks(values: np.ndarray, masks: np.ndarray, cfg: GuidanceConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sampled (inside, outside) masks for every entry, ranked by ``values``."""
    if not cfg.selective:
        return masks.copy(), 1.0 - masks
    inside = np.stack([selective_sample(v, m, cfg.sampling, rng) for v, m in zip(values, masks)])
    outside = np.stack([selective_sample(v, 1.0 - m, cfg.sampling, rng) if (m < 1).any()
                        else np.zeros_like(m) for v, m in zip(values, masks)])
    return inside, outside


def build_input(record: AttentionRecord, layout: Layout, masks: np.ndarray, cfg: GuidanceConfig,
                rng) -> ConstraintInput:
    A = record.token_maps(layout.token_indices)
    inside, outside = sample_masks(A.data, masks, cfg, rng)
    s_in = s_out = None
    if cfg.use_self:
        S_agg = masks @ record.self_attn.data
        s_in, s_out = sample_masks(S_agg, masks, cfg, rng)
    return ConstraintInput(A, masks, inside, outside, record.self_attn, s_in, s_out,
                           cfg.margin, cfg.margin_mode)


def frozen_objective(params: DenoiserParams, z0, t: int, layout: Layout, cfg: GuidanceConfig,
                     rng, context=None):
    """Constraint loss as a function of the latent with sampled masks held fixed.

    Masks are drawn once from the attention at ``z0``; the returned callable
    maps a (possibly recorded) latent to the scalar loss tensor.
    """
    mcfg = params.config
    context = context if context is not None else encode_tokens(params, layout.prompt)
    masks = layout.masks(mcfg.grid, mcfg.grid)
    _, rec0 = denoise(params, z0, t, context, record=True)
    base = build_input(rec0, layout, masks, cfg, rng)

    def objective(z):
        _, rec = denoise(params, z, t, context, record=True)
        inp = ConstraintInput(rec.token_maps(layout.token_indices), masks, base.inside, base.outside,
                              rec.self_attn, base.self_inside, base.self_outside,
                              cfg.margin, cfg.margin_mode)
        parts = loss_components(inp, cfg.components)
        return sum(parts.values(), start=0.0)

    return objective


def backtracked_step(objective, z: np.ndarray, lr: float, max_halvings: int = 8):
    """Gradient step on ``objective`` halving ``lr`` until the loss does not increase.

    Returns (new latent, loss before, loss after, halvings used). When no
    step size is accepted the latent is returned unchanged and the halving
    count is ``max_halvings + 1``.
    """
    tape = Tape()
    zt = tape.watch(z)
    loss = objective(zt)
    (grad,) = tape.gradients(loss, [zt])
    before = loss.item()
    for k in range(max_halvings + 1):
        cand = z - lr * grad
        after = objective(cand).item()
        if after <= before:
            return cand, before, after, k
        lr *= 0.5
    return z, before, before, max_halvings + 1


@dataclass
class RefineResult:
    latent: np.ndarray
    losses: list[dict]
    record: AttentionRecord | None = None


def constraint_loss(params, z, t, context, layout, masks, cfg, rng, tape=None):
    """Forward pass + constraint loss; returns (loss tensor, parts, record, input)."""
    eps, rec = denoise(params, z, t, context, record=True)
    inp = build_input(rec, layout, masks, cfg, rng)
    parts = loss_components(inp, cfg.components)
    total = sum(parts.values(), start=0.0) if parts else None
    return total, parts, rec, inp


def refine(z_t: np.ndarray, t: int, layout: Layout, params: DenoiserParams, cfg: GuidanceConfig,
           *, step_index: int = 0, context=None, seed: int = 0) -> RefineResult:
    """Run ``cfg.refine_steps`` gradient updates of the latent at timestep ``t``."""
    if not cfg.refines:
        return RefineResult(z_t, [])
    mcfg = params.config
    context = context if context is not None else encode_tokens(params, layout.prompt)
    masks = layout.masks(mcfg.grid, mcfg.grid)
    lr = eta(step_index, cfg)
    z = np.asarray(z_t, dtype=np.float64)
    losses = []
    rec = None
    for r in range(cfg.refine_steps):
        rng = step_rng(seed, step_index * 1000 + r)
        tape = Tape()
        zt = tape.watch(z)
        total, parts, rec, _ = constraint_loss(params, zt, t, context, layout, masks, cfg, rng)
        (grad,) = tape.gradients(total, [zt])
        entry = {"step": step_index, "t": t, "iter": r, "eta": lr,
                 **{k: v.item() for k, v in parts.items()}, "total": total.item()}
        losses.append(entry)
        if not np.isfinite(grad).all():
            log.warning("non-finite gradient at t=%d iteration %d; keeping last finite latent", t, r)
            break
        z = z - lr * grad
    return RefineResult(z, losses, rec)


def redistribute(record: AttentionRecord, masks: np.ndarray, token_indices,
                 norm_mode: str = "token") -> AttentionOverride:
    """Give each attending token the mask-gated sum of all attending maps, max-normalized."""
    A = record.token_maps(token_indices).data
    total = A.sum(axis=0)
    R = np.asarray(masks, dtype=np.float64) * total[None, :]
    if norm_mode == "global":
        peak = R.max()
        R = R / peak if peak > 0 else R
    else:
        peak = R.max(axis=1, keepdims=True)
        R = np.divide(R, peak, out=np.zeros_like(R), where=peak > 0)
    return AttentionOverride(list(token_indices), np.clip(R, 0.0, 1.0))


def attention_mass(record: AttentionRecord, layout: Layout, masks: np.ndarray) -> np.ndarray:
    A = record.token_maps(layout.token_indices).data
    tot = A.sum(axis=1)
    inside = (A * masks).sum(axis=1)
    return np.divide(inside, tot, out=np.zeros_like(tot), where=tot > 0)


@dataclass
class GenerationResult:
    image: np.ndarray
    latent: np.ndarray
    trace: list[dict]
    records: dict[int, AttentionRecord]  # by sampling-step index
    final_guided_record: AttentionRecord | None = None
    final_guided_mass: np.ndarray | None = None
    mean_guided_mass: float = 0.0


def run_guided_generation(layout: Layout, params: DenoiserParams, schedule: NoiseSchedule,
                          sample_cfg: SampleConfig, guidance_cfg: GuidanceConfig,
                          snapshot_steps=()) -> GenerationResult:
    """Deterministic sampling with refinement and redistribution on the first T_D steps."""
    mcfg = params.config
    ts = schedule.sampling_timesteps(sample_cfg.steps)
    if guidance_cfg.guided_steps > len(ts):
        raise ValueError(f"guided_steps {guidance_cfg.guided_steps} exceeds {len(ts)} sampling steps")
    cond = encode_tokens(params, layout.prompt)
    uncond = encode_tokens(params, empty_prompt(len(layout.prompt)))
    masks = layout.masks(mcfg.grid, mcfg.grid)
    z = initial_latent(sample_cfg.seed, (mcfg.L, mcfg.latent_dim))
    # sampler randomness lives on its own stream, split from the noise seed
    sub_seed = int(np.random.default_rng([sample_cfg.seed, 0x5A]).integers(2**31))
    trace: list[dict] = []
    records: dict[int, AttentionRecord] = {}
    masses = []
    final_rec = final_mass = None
    for i, t in enumerate(ts):
        t_next = ts[i + 1] if i + 1 < len(ts) else -1
        guided = i < guidance_cfg.guided_steps
        if guided and guidance_cfg.refines:
            try:
                res = refine(z, t, layout, params, guidance_cfg, step_index=i, context=cond,
                             seed=sub_seed)
            except Exception as exc:
                raise RuntimeError(f"refinement failed at step {i} (t={t}): {exc}") from exc
            z = res.latent
            trace.extend(res.losses)
        eps_c, rec = denoise(params, z, t, cond, record=True)
        if guided:
            m = attention_mass(rec, layout, masks)
            masses.append(m.mean())
            if i == guidance_cfg.guided_steps - 1:
                final_rec, final_mass = rec, m
            if guidance_cfg.redistribute:
                ov = redistribute(rec, masks, layout.token_indices, guidance_cfg.norm_mode)
                eps_c, _ = denoise(params, z, t, cond, ov, record=False)
        if i in snapshot_steps:
            records[i] = rec
        eps_u, _ = denoise(params, z, t, uncond, record=False)
        eps = cfg_combine(eps_u.data, eps_c.data, sample_cfg.guidance_scale)
        z = sample_step(z, eps, t, t_next, schedule)
    image = latent_to_image(z, mcfg)
    return GenerationResult(image, z, trace, records, final_rec, final_mass,
                            float(np.mean(masses)) if masses else 0.0)


def write_trace(trace: list[dict], path) -> None:
    with Path(path).open("w") as fh:
        for entry in trace:
            fh.write(json.dumps(entry) + "\n")
