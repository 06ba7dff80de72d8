"""Training, IL-grouped cross-validation, transfer studies and post-hoc audits."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import PROPERTIES, Dataset, FoldPlan, fit_scaler, kfold_by_il
from .finetune import FinetuneConfig, FinetuneModel
from .nn import AdamConfig, adam_step, mse_loss
from .nrs import EncoderSnapshot, PretrainConfig, PretrainModel, export_encoder, random_encoder, rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20
    validation_fraction: float = 0.1
    folds: int = 10
    seed: int = 0
    # validation criterion for early stopping: "mae" or "mse" on scaled targets
    stop_metric: str = "mae"

    def __post_init__(self):
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("batch_size and max_epochs must be positive")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must lie in (0, max_epochs)")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.stop_metric not in ("mae", "mse"):
            raise ValueError("stop_metric must be 'mae' or 'mse'")


# ---------------------------------------------------------------- metrics


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    r2: float
    mae: float
    mape: float
    n_records: int
    n_ils: int = 0


def metrics(pred, target, n_ils: int = 0) -> MetricReport:
    """R², MAE and MAPE on unscaled values."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape or pred.size == 0:
        raise MetricError("pred and target must have the same nonzero length")
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    if np.any(target == 0):
        raise MetricError("MAPE is undefined when a target is zero")
    mape = float(100.0 * np.mean(np.abs(err) / np.abs(target)))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R² is undefined for a constant target")
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot
    return MetricReport(r2, mae, mape, int(pred.size), n_ils)


def mean_report(reports) -> MetricReport:
    reports = list(reports)
    return MetricReport(
        float(np.mean([r.r2 for r in reports])),
        float(np.mean([r.mae for r in reports])),
        float(np.mean([r.mape for r in reports])),
        sum(r.n_records for r in reports),
        sum(r.n_ils for r in reports),
    )


def _n_ils(ds: Dataset) -> int:
    return len(set(zip(ds.cation.tolist(), ds.anion.tolist())))


# ---------------------------------------------------------------- training loop


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch] if self.val_loss else float("nan")


def train_loop(model, forward_batch, y, val_forward, y_val, settings: TrainSettings, learning_rate, seed):
    """Mini-batch Adam on MSE with early stopping; restores the best-validation weights.

    ``forward_batch(idx)`` runs a training-mode forward over rows ``idx``;
    ``val_forward()`` runs an inference-mode forward over the validation rows.
    All targets are already scaled.
    """
    params = [p for p in model.parameters().values() if not p.frozen]
    cfg = AdamConfig(learning_rate=learning_rate)
    y = y.reshape(-1, 1)
    y_val = y_val.reshape(-1, 1)
    n = len(y)
    hist = TrainHistory()
    best = None
    best_loss = np.inf
    stale = 0
    for epoch in range(settings.max_epochs):
        order = rng_for(seed, 10, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            for p in params:
                p.zero_grad()
            loss, grad = mse_loss(forward_batch(idx), y[idx])
            model.backward(grad)
            for p in params:
                adam_step(p, cfg)
            total += loss * len(idx)
        hist.train_loss.append(total / n)
        val_pred = val_forward()
        if settings.stop_metric == "mae":
            val_loss = float(np.mean(np.abs(val_pred - y_val)))
        else:
            val_loss, _ = mse_loss(val_pred, y_val)
        hist.val_loss.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            hist.best_epoch = epoch
            best = [p.value.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    for p, v in zip(params, best):
        p.value[...] = v
    return hist


def validation_split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of the ILs (at least one) for early stopping."""
    keys = sorted(set(zip(ds.cation.tolist(), ds.anion.tolist())))
    if len(keys) < 2:
        raise ValueError("need at least two ILs to carve out a validation slice")
    n_val = min(max(1, int(round(fraction * len(keys)))), len(keys) - 1)
    pick = rng_for(seed, 20).choice(len(keys), size=n_val, replace=False)
    held = {keys[i] for i in pick}
    mask = np.array([k in held for k in zip(ds.cation.tolist(), ds.anion.tolist())])
    return ds.subset(~mask), ds.subset(mask)


def fit_pretrain(config: PretrainConfig, vocab_sizes, train: Dataset, settings: TrainSettings, seed: int):
    """Train one pre-training model with early stopping on an IL-grouped slice."""
    fit, val = validation_split(train, settings.validation_fraction, seed)
    model = PretrainModel(config, vocab_sizes, seed)
    model.target_scaler = fit_scaler(fit.value)
    y = model.target_scaler.transform(fit.value)
    y_val = model.target_scaler.transform(val.value)
    hist = train_loop(
        model,
        lambda idx: model.forward(fit.cation[idx], fit.anion[idx], training=True),
        y,
        lambda: model.forward(val.cation, val.anion, training=False),
        y_val,
        settings,
        config.learning_rate,
        seed,
    )
    return model, hist


def fit_finetune(encoder: EncoderSnapshot, config: FinetuneConfig, train: Dataset, settings: TrainSettings, seed: int):
    fit, val = validation_split(train, settings.validation_fraction, seed)
    model = FinetuneModel(encoder, config, seed)
    model.fit_scalers(fit)
    x = model.dataset_features(fit)
    x_val = model.dataset_features(val)
    y = model.target_scaler.transform(fit.value)
    y_val = model.target_scaler.transform(val.value)
    hist = train_loop(
        model,
        lambda idx: model.forward(x[idx], training=True),
        y,
        lambda: model.forward(x_val, training=False),
        y_val,
        settings,
        config.learning_rate,
        seed,
    )
    return model, hist


# ---------------------------------------------------------------- cross-validation


@dataclass
class GridResult:
    config: object
    folds: list
    mean: MetricReport


@dataclass
class SearchResult:
    model: object
    best: GridResult
    grid: list
    history: TrainHistory
    plan: FoldPlan

    @property
    def cv(self) -> MetricReport:
        return self.best.mean


def _evaluate(model, ds: Dataset) -> MetricReport:
    t = ds.temperature
    p = ds.pressure
    return metrics(model.predict(ds.cation, ds.anion, t, p), ds.value, _n_ils(ds))


def _cv(ds: Dataset, plan: FoldPlan, fit_fn) -> list[MetricReport]:
    folds = plan.fold_of(zip(ds.cation.tolist(), ds.anion.tolist()))
    reports = []
    for f in range(plan.k):
        test = folds == f
        model, _ = fit_fn(ds.subset(~test), f)
        reports.append(_evaluate(model, ds.subset(test)))
    return reports


def _select(results: list[GridResult]) -> GridResult:
    # lowest mean MAE, ties broken by higher R², then grid order
    return min(enumerate(results), key=lambda ir: (ir[1].mean.mae, -ir[1].mean.r2, ir[0]))[1]


def pretrain(dataset: Dataset, vocab_sizes, grid, settings: TrainSettings = TrainSettings()) -> SearchResult:
    """Grid search with IL-grouped k-fold CV, then refit the best config on all data."""
    ds = dataset.canonical()
    if len(set(ds.temperature.tolist())) > 1 or len(set(ds.pressure.tolist())) > 1:
        raise ValueError("pre-training data must sit at a single temperature and pressure")
    if _n_ils(ds) < settings.folds:
        raise ValueError(f"pre-training needs at least {settings.folds} ILs")
    grid = list(grid)
    plan = kfold_by_il(ds, settings.folds, settings.seed)
    results = []
    for i, config in enumerate(grid):
        folds = _cv(ds, plan, lambda tr, f: fit_pretrain(config, vocab_sizes, tr, settings, _run_seed(settings, f)))
        results.append(GridResult(config, folds, mean_report(folds)))
        log.info("pretrain %s grid %d: CV MAE %.4g", config.property, i, results[-1].mean.mae)
    best = _select(results)
    model, hist = fit_pretrain(best.config, vocab_sizes, ds, settings, _run_seed(settings, settings.folds))
    return SearchResult(model, best, results, hist, plan)


def finetune(encoder: EncoderSnapshot, dataset: Dataset, grid, settings: TrainSettings = TrainSettings()) -> SearchResult:
    """Grid search over fine-tune heads on a frozen encoder with IL-grouped k-fold CV."""
    ds = dataset.canonical()
    if _n_ils(ds) < settings.folds:
        raise ValueError(f"fine-tuning needs at least {settings.folds} ILs")
    grid = list(grid)
    plan = kfold_by_il(ds, settings.folds, settings.seed)
    results = []
    for config in grid:
        if config.property != ds.property:
            raise ValueError(f"config targets {config.property}, dataset holds {ds.property}")
        folds = _cv(ds, plan, lambda tr, f: fit_finetune(encoder, config, tr, settings, _run_seed(settings, f)))
        results.append(GridResult(config, folds, mean_report(folds)))
    best = _select(results)
    model, hist = fit_finetune(encoder, best.config, ds, settings, _run_seed(settings, settings.folds))
    return SearchResult(model, best, results, hist, plan)


def _run_seed(settings: TrainSettings, fold: int) -> int:
    return int(rng_for(settings.seed, 30, fold).integers(2**62))


# ---------------------------------------------------------------- studies


@dataclass
class TransferCell:
    source: str
    target: str
    folds: list
    mean: MetricReport

    @property
    def within_property(self) -> bool:
        return self.source == self.target


def default_finetune_grid(prop: str, widths=(100,)) -> list[FinetuneConfig]:
    return [FinetuneConfig.for_property(prop, head_width=w) for w in widths]


def transfer_matrix(encoders: dict, datasets: dict, settings: TrainSettings = TrainSettings(), grid_for=default_finetune_grid):
    """Fine-tune every target on every source encoder; returns a list of cells."""
    cells = []
    for source, encoder in encoders.items():
        for target in PROPERTIES:
            if target not in datasets:
                continue
            res = finetune(encoder, datasets[target], grid_for(target), settings)
            cells.append(TransferCell(source, target, res.best.folds, res.cv))
    return cells


def baseline_finetune(encoder_config: PretrainConfig, vocab_sizes, dataset: Dataset, settings, grid, seed) -> SearchResult:
    """Fine-tune on a random frozen encoder shaped like ``encoder_config``."""
    return finetune(random_encoder(encoder_config, vocab_sizes, seed), dataset, grid, settings)


@dataclass
class SweepPoint:
    anions_per_cation: int
    n_pretrain_ils: int
    pretrain: MetricReport
    finetune: dict


def size_sweep(
    fractions,
    oracle_config,
    plan,
    settings: TrainSettings = TrainSettings(),
    source: str = "density",
    pretrain_grid=None,
    targets=PROPERTIES,
    grid_for=default_finetune_grid,
):
    """Pre-train on progressively larger stratified samples and fine-tune every target."""
    from .oracle import emit_datasets

    pretrain_grid = pretrain_grid or [PretrainConfig(property=source)]
    points = []
    for n in fractions:
        data = emit_datasets(oracle_config, replace(plan, anions_per_cation=n), pretrain_properties=(source,))
        vocab = (len(data.cations), len(data.anions))
        pre = pretrain(data.pretrain[source], vocab, pretrain_grid, settings)
        enc = export_encoder(pre.model)
        ft = {t: finetune(enc, data.experimental[t], grid_for(t), settings).cv for t in targets}
        points.append(SweepPoint(n, len(data.pretrain_pairs), pre.cv, ft))
        log.info("sweep n=%d: pretrain MAE %.4g", n, pre.cv.mae)
    return points


@dataclass(frozen=True)
class AuditResult:
    k3: float
    b: float
    c: float
    r2: float


def correlation_audit(density, viscosity, surface_tension) -> AuditResult:
    """Least-squares fit of ln σ = ln k3 + b ln μ + c ln ρ."""
    rho = np.asarray(density, dtype=np.float64).ravel()
    mu = np.asarray(viscosity, dtype=np.float64).ravel()
    sigma = np.asarray(surface_tension, dtype=np.float64).ravel()
    if not rho.shape == mu.shape == sigma.shape:
        raise ValueError("audit inputs differ in length")
    if np.any(rho <= 0) or np.any(mu <= 0) or np.any(sigma <= 0):
        raise ValueError("audit needs strictly positive density, viscosity and surface tension")
    X = np.column_stack([np.ones_like(rho), np.log(mu), np.log(rho)])
    y = np.log(sigma)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return AuditResult(float(np.exp(coef[0])), float(coef[1]), float(coef[2]), r2)


def iter_full_space(models: dict, n_cations: int, n_anions: int, temperature=298.0, pressure=1.0, chunk_cations: int = 32):
    """Yield ``(cation_ids, anion_ids, {property: values})`` over every cation-anion pair."""
    anion_block = np.arange(n_anions)
    for start in range(0, n_cations, chunk_cations):
        cats = np.arange(start, min(start + chunk_cations, n_cations))
        c = np.repeat(cats, n_anions)
        a = np.tile(anion_block, len(cats))
        yield c, a, {prop: m.predict(c, a, temperature, pressure) for prop, m in models.items()}


def full_space_predict(fh, models: dict, cations, anions, temperature=298.0, pressure=1.0) -> int:
    """Stream one CSV row per (cation, anion) pair to ``fh``; returns the row count."""
    props = list(models)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["cation", "anion", *props])
    rows = 0
    for c, a, preds in iter_full_space(models, len(cations), len(anions), temperature, pressure):
        cols = [preds[p] for p in props]
        cn, an = cations.names, anions.names
        w.writerows(
            [cn[ci], an[ai], *(repr(float(col[i])) for col in cols)]
            for i, (ci, ai) in enumerate(zip(c.tolist(), a.tolist()))
        )
        rows += len(c)
    return rows


# ---------------------------------------------------------------- reports


def write_fold_report(path, rows) -> None:
    """``rows`` are dicts with label columns plus a ``fold`` index and a MetricReport."""
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = None
        for row in rows:
            flat = {k: v for k, v in row.items() if k != "report"}
            flat.update(asdict(row["report"]))
            if w is None:
                w = csv.DictWriter(fh, fieldnames=list(flat), lineterminator="\n")
                w.writeheader()
            w.writerow(flat)


def search_rows(result: SearchResult, **labels):
    for gi, g in enumerate(result.grid):
        for f, rep in enumerate(g.folds):
            yield {**labels, "grid_index": gi, "fold": f, "report": rep}
