"""Train the toy denoiser and write the fixture checkpoint plus its loss curve."""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from layoutguide.model import save_checkpoint
from layoutguide.scheduler import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--optimizer", default="adam")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="fixtures/denoiser.ckpt")
    ap.add_argument("--every", type=int, default=250)
    args = ap.parse_args()

    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr,
                      optimizer=args.optimizer, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    start = time.time()

    window = []

    def report(step, loss, params):
        window.append(loss)
        if (step + 1) % args.every == 0:
            save_checkpoint(params, out)
            print(f"step {step + 1} loss {np.mean(window):.4f} "
                  f"elapsed {time.time() - start:.0f}s", flush=True)
            window.clear()

    params, history = train(cfg, callback=report)
    save_checkpoint(params, out)
    curve = out.with_suffix(".loss.json")
    curve.write_text(json.dumps({"config": vars(args), "loss": history,
                                 "seconds": time.time() - start}))
    print(f"wrote {out} and {curve}")


if __name__ == "__main__":
    main()
