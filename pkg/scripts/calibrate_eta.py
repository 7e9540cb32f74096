"""Measure the first refinement gradient on the fixture model and suggest eta0.

The step size is chosen so the first latent update stays within a given
fraction of the initial noise norm for every probed (layout, seed) pair.
"""

import argparse

import numpy as np

from layoutguide.experiments import evaluation_layouts
from layoutguide.guidance import GuidanceConfig, build_input
from layoutguide.constraints import loss_components
from layoutguide.model import denoise, encode_tokens, load_checkpoint
from layoutguide.sampling import step_rng
from layoutguide.scheduler import NoiseSchedule, SampleConfig, initial_latent
from layoutguide.tensor import Tape


def first_gradient(params, layout, seed, cfg, schedule, steps):
    mcfg = params.config
    t = schedule.sampling_timesteps(steps)[0]
    z = initial_latent(seed, (mcfg.L, mcfg.latent_dim))
    ctx = encode_tokens(params, layout.prompt)
    tape = Tape()
    zt = tape.watch(z)
    _, rec = denoise(params, zt, t, ctx)
    inp = build_input(rec, layout, layout.masks(mcfg.grid, mcfg.grid), cfg, step_rng(seed, 0))
    parts = loss_components(inp, cfg.components)
    (g,) = tape.gradients(sum(parts.values(), start=0.0), [zt])
    return np.linalg.norm(g), np.linalg.norm(z)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", default="fixtures/denoiser.ckpt")
    ap.add_argument("--seeds", type=int, default=16)
    ap.add_argument("--fraction", type=float, default=0.05)
    args = ap.parse_args()

    params = load_checkpoint(args.checkpoint)
    cfg = GuidanceConfig()
    schedule = NoiseSchedule()
    layouts = evaluation_layouts(args.seeds)
    ratios = []
    for seed, lay in enumerate(layouts):
        gn, zn = first_gradient(params, lay, seed, cfg, schedule, SampleConfig().steps)
        ratios.append(gn / zn)
        print(f"seed {seed:3d} |grad| {gn:.4g} |z_T| {zn:.4g}")
    ratios = np.array(ratios)
    bound = args.fraction / ratios.max()
    print(f"grad/z ratio: median {np.median(ratios):.4g} max {ratios.max():.4g}")
    print(f"largest eta0 keeping every first update within {args.fraction:.0%} of |z_T|: {bound:.4g}")
    print(f"current default eta0 {cfg.eta0}: worst-case first update "
          f"{cfg.eta0 * ratios.max():.2%} of |z_T|")


if __name__ == "__main__":
    main()
