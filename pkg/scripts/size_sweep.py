"""Pre-training set size sweep: anions sampled per cation versus pre-train and fine-tune MAE."""

import argparse
import logging

from ilnrs.benchmark import run_sweep
from ilnrs.data import PROPERTIES


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fractions", type=int, nargs="+", default=[1, 5, 10, 20, 35, 50])
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    sweep = run_sweep(args.seed, tuple(args.fractions))
    print("anions/cation  pretrain MAE  " + "  ".join(f"{t:>15}" for t in PROPERTIES))
    for i, n in enumerate(sweep.fractions):
        row = "  ".join(f"{sweep.finetune_mae[t][i]:>15.4g}" for t in PROPERTIES)
        print(f"{n:>13}  {sweep.pretrain_mae[i]:>12.4g}  {row}")
    print("fine-tune spread (max-min)/min: " + ", ".join(f"{t} {sweep.finetune_spread(t):.1%}" for t in PROPERTIES))


if __name__ == "__main__":
    main()
