"""Seed sweeps, guided-vs-unguided comparisons and ablation grids."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .guidance import GuidanceConfig, run_guided_generation
from .layout import Layout
from .metrics import LocalizationReport, centroid_in_box
from .model import DenoiserParams
from .scheduler import NoiseSchedule, SampleConfig
from .shapes import DatasetSpec, make_sample


def evaluation_layouts(count: int, seed: int = 1234, n_objects: int = 2,
                       attend: str = "color", spec: DatasetSpec | None = None) -> list[Layout]:
    """Layouts drawn from the dataset's own placement distribution."""
    rng = np.random.default_rng([seed, n_objects])
    spec = spec or DatasetSpec()
    return [make_sample(rng, spec, n_objects).layout(attend) for _ in range(count)]


def _one(args):
    params, layout, seed, sample_cfg, guidance_cfg = args
    start = time.perf_counter()
    res = run_guided_generation(layout, params, NoiseSchedule(), replace(sample_cfg, seed=seed),
                                guidance_cfg)
    flags = centroid_in_box(res.image, layout)
    return seed, res.final_guided_mass, flags, time.perf_counter() - start, res.mean_guided_mass


def evaluate(params: DenoiserParams, layouts: list[Layout], seeds: list[int],
             sample_cfg: SampleConfig, guidance_cfg: GuidanceConfig, workers: int = 1) -> LocalizationReport:
    """One generation per (layout, seed) pair; results keyed and ordered by seed."""
    if not seeds:
        raise ValueError("evaluation needs at least one seed")
    if len(layouts) != len(seeds):
        layouts = [layouts[k % len(layouts)] for k in range(len(seeds))]
    jobs = [(params, lay, s, sample_cfg, guidance_cfg) for lay, s in zip(layouts, seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    report = LocalizationReport()
    for seed, masses, flags, sec, gm in sorted(results, key=lambda r: r[0]):
        report.add(seed, masses, flags, sec, gm)
    return report


ABLATIONS = {
    "components": [
        ("intra", dict(use_inter=False, use_self=False)),
        ("intra+inter", dict(use_self=False)),
        ("intra+inter+self", {}),
    ],
    "K": [(f"K={k}", dict(sampling_top=k)) for k in (1.0, 0.8, 0.6, 0.4)],
    "M": [(f"M={m}", dict(sampling_keep=m)) for m in (1.0, 0.75, 0.5, 0.25)],
    "KM": [("K=1,M=1", dict(sampling_top=1.0, sampling_keep=1.0)),
           ("K=0.8,M=0.5", dict(sampling_top=0.8, sampling_keep=0.5))],
    "margin": [(f"g={g}", dict(margin=g)) for g in (0.05, 0.1, 0.2)],
    "TR": [(f"T_R={r}", dict(refine_steps=r)) for r in (1, 3, 5, 7)],
    "TD": [(f"T_D={d}", dict(guided_steps=d)) for d in (15, 20, 25, 30)],
}


def variant(base: GuidanceConfig, **changes) -> GuidanceConfig:
    top = changes.pop("sampling_top", None)
    keep = changes.pop("sampling_keep", None)
    cfg = replace(base, **changes)
    if top is not None or keep is not None:
        s = cfg.sampling
        cfg = replace(cfg, sampling=replace(s, top_fraction=top if top is not None else s.top_fraction,
                                            keep_fraction=keep if keep is not None else s.keep_fraction))
    return cfg


def ablate(params, layouts, seeds, sample_cfg, base: GuidanceConfig, grid: str, workers: int = 1):
    """Rows of (name, report) over the named grid."""
    if grid not in ABLATIONS:
        raise KeyError(f"unknown ablation grid {grid!r}; choose from {sorted(ABLATIONS)}")
    return [(name, evaluate(params, layouts, seeds, sample_cfg, variant(base, **ch), workers))
            for name, ch in ABLATIONS[grid]]
