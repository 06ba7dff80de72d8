"""Effect of inflated ln-viscosity rows in pre-training on fine-tuned viscosity accuracy."""

import argparse

from ilnrs.benchmark import benchmark_settings
from ilnrs.nrs import PretrainConfig, export_encoder
from ilnrs.oracle import OracleConfig, SamplingPlan, emit_datasets
from ilnrs.pipeline import default_finetune_grid, finetune, pretrain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.001, 0.002, 0.005, 0.01])
    args = ap.parse_args()

    print("seed  outlier_fraction  pretrain_R2  finetune_MAE")
    for seed in args.seeds:
        settings = benchmark_settings(seed)
        for frac in args.fractions:
            data = emit_datasets(OracleConfig(seed=seed, outlier_fraction=frac), SamplingPlan(), pretrain_properties=("ln_viscosity",))
            pre = pretrain(data.pretrain["ln_viscosity"], (len(data.cations), len(data.anions)), [PretrainConfig(property="ln_viscosity")], settings)
            ft = finetune(export_encoder(pre.model), data.experimental["ln_viscosity"], default_finetune_grid("ln_viscosity"), settings)
            print(f"{seed:>4}  {frac:>16}  {pre.cv.r2:>11.4f}  {ft.cv.mae:>12.4g}", flush=True)


if __name__ == "__main__":
    main()
