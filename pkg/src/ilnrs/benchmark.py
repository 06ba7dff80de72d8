"""Synthetic transfer benchmark shared by the experiment scripts and the acceptance suite.

One call to :func:`run_seed` generates a synthetic universe, pre-trains an
encoder per source property, and fine-tunes the targets needed for the
transfer, within/cross and outlier comparisons. Results are plain numbers so
they can be cached or dumped to JSON.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import PRETRAIN_PROPERTIES, PROPERTIES
from .nrs import PretrainConfig, export_encoder, random_encoder
from .oracle import OracleConfig, SamplingPlan, emit_datasets
from .pipeline import TrainSettings, correlation_audit, default_finetune_grid, finetune, pretrain, size_sweep

log = logging.getLogger(__name__)

# the viscosity and heat-capacity targets are compared across all three sources
CROSS_TARGETS = ("ln_viscosity", "heat_capacity")


def benchmark_settings(seed: int = 0) -> TrainSettings:
    """Training settings used for benchmark runs: smaller batches and a shorter epoch cap."""
    return TrainSettings(batch_size=64, max_epochs=200, patience=20, seed=seed)


@dataclass
class SeedResult:
    seed: int
    pretrain_r2: dict = field(default_factory=dict)
    pretrain_mae: dict = field(default_factory=dict)
    # (source, target) -> fine-tune CV MAE; source "random" is the frozen baseline
    finetune_mae: dict = field(default_factory=dict)
    clean_viscosity_mae: float = float("nan")
    audit_r2: float = float("nan")
    seconds: float = 0.0

    def ratio(self, target: str, source: str = "density") -> float:
        return self.finetune_mae[(source, target)] / self.finetune_mae[("random", target)]

    def within(self, target: str) -> float:
        return self.finetune_mae[(target, target)]

    def cross(self, target: str) -> float:
        return float(np.mean([self.finetune_mae[(s, target)] for s in PRETRAIN_PROPERTIES if s != target]))


def _cell_plan():
    cells = [("density", t) for t in PROPERTIES] + [("random", t) for t in PROPERTIES]
    for s in PRETRAIN_PROPERTIES:
        for t in CROSS_TARGETS:
            if (s, t) not in cells:
                cells.append((s, t))
    return cells


def run_seed(seed: int, oracle: OracleConfig | None = None, plan: SamplingPlan | None = None, settings: TrainSettings | None = None) -> SeedResult:
    t0 = time.perf_counter()
    oracle = replace(oracle or OracleConfig(), seed=seed)
    plan = plan or SamplingPlan()
    settings = settings or benchmark_settings(seed)
    data = emit_datasets(oracle, plan)
    vocab = (len(data.cations), len(data.anions))
    out = SeedResult(seed)

    encoders = {}
    for source in PRETRAIN_PROPERTIES:
        res = pretrain(data.pretrain[source], vocab, [PretrainConfig(property=source)], settings)
        out.pretrain_r2[source], out.pretrain_mae[source] = res.cv.r2, res.cv.mae
        encoders[source] = export_encoder(res.model)
        log.info("seed %d pretrain %s: R2 %.4f MAE %.4g", seed, source, res.cv.r2, res.cv.mae)
    encoders["random"] = random_encoder(PretrainConfig(), vocab, seed + 1_000_003)

    fitted = {}
    for source, target in _cell_plan():
        res = finetune(encoders[source], data.experimental[target], default_finetune_grid(target), settings)
        out.finetune_mae[(source, target)] = res.cv.mae
        fitted[(source, target)] = res.model

    # same universe, viscosity pre-training without the inflated rows
    clean = emit_datasets(replace(oracle, outlier_fraction=0.0), plan, pretrain_properties=("ln_viscosity",))
    res = pretrain(clean.pretrain["ln_viscosity"], vocab, [PretrainConfig(property="ln_viscosity")], settings)
    enc = export_encoder(res.model)
    out.clean_viscosity_mae = finetune(enc, data.experimental["ln_viscosity"], default_finetune_grid("ln_viscosity"), settings).cv.mae

    # power-law audit of the fine-tuned predictions over the whole universe
    c, a = np.divmod(np.arange(vocab[0] * vocab[1]), vocab[1])
    rho = fitted[("density", "density")].predict(c, a, 298.0, 1.0)
    mu = np.exp(fitted[("density", "ln_viscosity")].predict(c, a, 298.0, 1.0))
    sigma = fitted[("density", "surface_tension")].predict(c, a, 298.0, 1.0)
    ok = (rho > 0) & (mu > 0) & (sigma > 0)
    out.audit_r2 = correlation_audit(rho[ok], mu[ok], sigma[ok]).r2
    out.seconds = time.perf_counter() - t0
    return out


@dataclass
class SweepResult:
    fractions: tuple
    pretrain_mae: list
    finetune_mae: dict  # target -> list aligned with fractions

    def finetune_spread(self, target: str) -> float:
        """(max - min) / min of fine-tune MAE across fractions."""
        v = np.asarray(self.finetune_mae[target])
        return float((v.max() - v.min()) / v.min())


def run_sweep(seed: int = 0, fractions=(1, 5, 50), oracle: OracleConfig | None = None, plan: SamplingPlan | None = None, settings: TrainSettings | None = None) -> SweepResult:
    oracle = replace(oracle or OracleConfig(), seed=seed)
    points = size_sweep(fractions, oracle, plan or SamplingPlan(), settings or benchmark_settings(seed))
    return SweepResult(
        tuple(fractions),
        [p.pretrain.mae for p in points],
        {t: [p.finetune[t].mae for p in points] for t in PROPERTIES},
    )
