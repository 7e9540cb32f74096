"""Write the small randomly initialized checkpoint used by the CLI tests."""

import argparse

from layoutguide.model import ModelConfig, init_params, save_checkpoint

TINY = ModelConfig(grid=4, patch=2, d=8, heads=2, blocks=1, d_text=8, vocab=16, n_ctx=16, d_time=8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="fixtures/tiny.ckpt")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    save_checkpoint(init_params(args.seed, TINY), args.out)
    print(args.out)


if __name__ == "__main__":
    main()
