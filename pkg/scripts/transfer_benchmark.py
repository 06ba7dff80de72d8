"""Transfer matrix and random-baseline comparison on the synthetic benchmark.

    python scripts/transfer_benchmark.py --seeds 0 1 2 --json results.json
"""

import argparse
import json
import logging

from ilnrs.benchmark import CROSS_TARGETS, run_seed
from ilnrs.data import PROPERTIES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--json", help="dump raw per-seed numbers here")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    results = []
    for seed in args.seeds:
        r = run_seed(seed)
        results.append(r)
        print(f"seed {seed} ({r.seconds:.0f}s)")
        for s in r.pretrain_r2:
            print(f"  pretrain {s:<14} R2 {r.pretrain_r2[s]:.4f}  MAE {r.pretrain_mae[s]:.4g}")
        for t in PROPERTIES:
            print(f"  {t:<16} density {r.finetune_mae[('density', t)]:.4g}  random {r.finetune_mae[('random', t)]:.4g}  ratio {r.ratio(t):.3f}")
        for t in CROSS_TARGETS:
            print(f"  {t:<16} within {r.within(t):.4g}  cross {r.cross(t):.4g}")
        print(f"  viscosity fine-tune MAE without outliers {r.clean_viscosity_mae:.4g}; audit R2 {r.audit_r2:.3f}")

    if args.json:
        dump = [
            {
                "seed": r.seed,
                "pretrain_r2": r.pretrain_r2,
                "pretrain_mae": r.pretrain_mae,
                "finetune_mae": {f"{s}->{t}": v for (s, t), v in r.finetune_mae.items()},
                "clean_viscosity_mae": r.clean_viscosity_mae,
                "audit_r2": r.audit_r2,
            }
            for r in results
        ]
        with open(args.json, "w") as fh:
            json.dump(dump, fh, indent=2)


if __name__ == "__main__":
    main()
