"""Command-line entry point: train, generate, eval, ablate.

Outputs go to ``--out-dir`` (default: $LAYOUTGUIDE_OUT or ./runs).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import zlib
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import from_dict, load_config, to_dict
from .experiments import ABLATIONS, ablate, evaluate, evaluation_layouts
from .guidance import GuidanceConfig, SampleConfig, run_guided_generation, write_trace
from .imageio import write_heatmap, write_image
from .layout import LayoutError, load_layout
from .model import load_checkpoint, save_checkpoint
from .scheduler import NoiseSchedule, train

log = logging.getLogger("layoutguide")


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get("LAYOUTGUIDE_OUT", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _configs(args):
    cfgs = load_config(args.config)
    if getattr(args, "unguided", False):
        g = cfgs["guidance"]
        cfgs["guidance"] = GuidanceConfig.disabled(guided_steps=g.guided_steps, refine_steps=g.refine_steps)
    if getattr(args, "seed", None) is not None:
        cfgs["sample"] = replace(cfgs["sample"], seed=args.seed)
    return cfgs


def _checkpoint(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _crc(path) -> str:
    return f"{zlib.crc32(Path(path).read_bytes()):08x}"


def cmd_train(args) -> int:
    cfg = _configs(args)["train"]
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    out = _out_dir(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "denoiser.ckpt"
    params, history = train(cfg, callback=lambda s, l, p: log.info("step %d loss %.4f", s + 1, l))
    save_checkpoint(params, ckpt)
    (ckpt.with_suffix(".loss.json")).write_text(json.dumps({"train": to_dict(cfg), "loss": history}))
    print(ckpt)
    return 0


def _generate(ckpt_path, layout_path, guidance, sample, out: Path, heatmaps: bool):
    params = _checkpoint(ckpt_path)
    layout = load_layout(layout_path)
    snap = set(range(guidance.guided_steps)) if heatmaps else ()
    res = run_guided_generation(layout, params, NoiseSchedule(), sample, guidance, snapshot_steps=snap)
    files = [write_image(res.image, out / "image.ppm", "ppm")]
    trace = out / "trace.jsonl"
    write_trace(res.trace, trace)
    files.append(trace)
    g = params.config.grid
    if heatmaps:
        hdir = out / "heatmaps"
        hdir.mkdir(exist_ok=True)
        for step, rec in sorted(res.records.items()):
            maps = rec.token_maps(layout.token_indices).data
            for k, m in enumerate(maps):
                files.append(write_heatmap(m, g, g, hdir / f"step{step:02d}_entry{k}.pgm"))
    return res, files


def cmd_generate(args) -> int:
    if args.replay:
        man = json.loads(Path(args.replay).read_text())
        guidance = from_dict(GuidanceConfig, man["config"]["guidance"])
        sample = from_dict(SampleConfig, man["config"]["sample"])
        ckpt, layout_path, heat = man["checkpoint"], man["layout"], man["heatmaps"]
        if _crc(ckpt) != man["checkpoint_crc32"]:
            raise UsageError(f"checkpoint {ckpt} changed since the manifest was written")
    else:
        if not args.checkpoint or not args.layout:
            raise UsageError("generate needs --checkpoint and --layout (or --replay)")
        cfgs = _configs(args)
        guidance, sample = cfgs["guidance"], cfgs["sample"]
        ckpt, layout_path, heat = args.checkpoint, args.layout, args.heatmaps
    if not Path(layout_path).is_file():
        raise UsageError(f"layout not found: {layout_path}")
    out = _out_dir(args)
    res, files = _generate(ckpt, layout_path, guidance, sample, out, heat)
    manifest = {
        "version": __version__,
        "checkpoint": str(ckpt),
        "checkpoint_crc32": _crc(ckpt),
        "layout": str(layout_path),
        "heatmaps": bool(heat),
        "seeds": [sample.seed],
        "config": {"guidance": to_dict(guidance), "sample": to_dict(sample)},
        "outputs": {p.relative_to(out).as_posix(): _crc(p) for p in files},
        "final_attention_in_box": [float(m) for m in (res.final_guided_mass if res.final_guided_mass is not None else [])],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(out / "image.ppm")
    return 0


def _layouts(args, count):
    if args.layouts:
        paths = []
        for p in args.layouts:
            p = Path(p)
            paths += sorted(p.glob("*.json")) if p.is_dir() else [p]
        if not paths:
            raise UsageError("no layout files found")
        return [load_layout(p) for p in paths]
    return evaluation_layouts(count, seed=args.layout_seed)


def cmd_eval(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    params = _checkpoint(args.checkpoint)
    cfgs = _configs(args)
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    layouts = _layouts(args, len(seeds))
    report = evaluate(params, layouts, seeds, cfgs["sample"], cfgs["guidance"], args.workers)
    out = _out_dir(args)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    print(json.dumps(report.summary()))
    return 0


def cmd_ablate(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    params = _checkpoint(args.checkpoint)
    cfgs = _configs(args)
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    layouts = _layouts(args, len(seeds))
    out = _out_dir(args)
    rows = []
    for grid in args.grid:
        for name, rep in ablate(params, layouts, seeds, cfgs["sample"], cfgs["guidance"], grid, args.workers):
            rows.append({"grid": grid, "variant": name, **rep.summary()})
            rep.to_json(out / f"report_{grid}_{name.replace(',', '_').replace('=', '')}.json")
            print(f"{grid:10s} {name:18s} mass={rep.mean_mass:.4f} centroid={rep.centroid_rate:.3f}")
    (out / "ablation.json").write_text(json.dumps(rows, indent=1))
    with (out / "ablation.csv").open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="layoutguide", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with guidance/sample/train sections")
        p.add_argument("--out-dir", help="output directory (overrides $LAYOUTGUIDE_OUT)")

    p = sub.add_parser("train", help="train the toy denoiser")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="guided generation for one layout")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--layout")
    p.add_argument("--seed", type=int)
    p.add_argument("--unguided", action="store_true", help="disable all guidance")
    p.add_argument("--heatmaps", action="store_true", help="write PGM attention snapshots")
    p.add_argument("--replay", help="regenerate from a manifest.json")
    p.set_defaults(func=cmd_generate)

    for name, fn, helptext in (("eval", cmd_eval, "localization report over a seed sweep"),
                               ("ablate", cmd_ablate, "ablation grid over guidance settings")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--layouts", nargs="*", help="layout files or directories")
        p.add_argument("--layout-seed", type=int, default=1234)
        p.add_argument("--seeds", type=int, default=32)
        p.add_argument("--seed-base", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        if name == "eval":
            p.add_argument("--unguided", action="store_true")
        else:
            p.add_argument("--grid", nargs="+", default=["components"], choices=sorted(ABLATIONS))
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, LayoutError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
