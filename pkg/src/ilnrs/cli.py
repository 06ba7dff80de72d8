"""Command-line entry point: ``ilnrs <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    PROPERTIES,
    DataFormatError,
    Dataset,
    load_ions,
    load_records,
    split_by_property,
    write_ions,
    write_records,
)
from .finetune import FinetuneConfig
from .nrs import PretrainConfig, random_encoder
from .oracle import OracleConfig, SamplingPlan, emit_datasets
from .persist import ArtifactError, load_model, save_model
from .pipeline import (
    TrainSettings,
    correlation_audit,
    finetune,
    full_space_predict,
    pretrain,
    search_rows,
    size_sweep,
    transfer_matrix,
    write_fold_report,
    metrics,
)

log = logging.getLogger("ilnrs")
COMMANDS = ("gen-synth", "pretrain", "finetune", "transfer-matrix", "size-sweep", "predict", "full-space", "audit", "evaluate")


class CLIError(Exception):
    pass


@dataclass
class RunConfig:
    """Declarative job description; every key is optional and unknown keys are rejected."""

    command: str | None = None
    seed: int = 0
    out: str = "."
    ions: str | None = None
    records: str | None = None
    pretrain_records: str | None = None
    property: str | None = None
    encoder: list = field(default_factory=list)
    model: list = field(default_factory=list)
    baseline: bool = False
    oracle: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    pretrain_grid: dict = field(default_factory=dict)
    finetune_grid: dict = field(default_factory=dict)
    fractions: list = field(default_factory=lambda: [1, 5, 10, 20, 35, 50])
    source: str = "density"
    cation: str | None = None
    anion: str | None = None
    temperature: float = 298.0
    pressure: float = 1.0
    synthetic: bool = False

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CLIError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise CLIError(f"config file {path} is not valid JSON: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise CLIError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**raw)


def _grid(spec: dict, keys, make):
    """Cartesian product of list-valued entries in ``spec``."""
    import itertools

    unknown = set(spec) - set(keys)
    if unknown:
        raise CLIError(f"unknown grid key(s): {', '.join(sorted(unknown))}")
    axes = {k: spec.get(k, [v]) for k, v in keys.items()}
    names = list(axes)
    return [make(**dict(zip(names, combo))) for combo in itertools.product(*(axes[n] for n in names))]


def pretrain_grid(cfg: RunConfig, prop: str):
    return _grid(
        cfg.pretrain_grid,
        {"branch_width": 100, "blocks_per_branch": 1, "head_width": 100},
        lambda **kw: PretrainConfig(property=prop, **kw),
    )


def finetune_grid(cfg: RunConfig, prop: str):
    return _grid(cfg.finetune_grid, {"head_width": 100}, lambda **kw: FinetuneConfig.for_property(prop, **kw))


def _settings(cfg: RunConfig) -> TrainSettings:
    try:
        return TrainSettings(**{**cfg.settings, "seed": cfg.seed})
    except TypeError as exc:
        raise CLIError(f"bad settings: {exc}") from None


def _oracle(cfg: RunConfig) -> OracleConfig:
    try:
        return OracleConfig(**{**cfg.oracle, "seed": cfg.seed})
    except TypeError as exc:
        raise CLIError(f"bad oracle config: {exc}") from None


def _plan(cfg: RunConfig) -> SamplingPlan:
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.plan.items()}
    try:
        return SamplingPlan(**kw)
    except TypeError as exc:
        raise CLIError(f"bad sampling plan: {exc}") from None


def _require(value, flag):
    if value is None or value == []:
        raise CLIError(f"missing required option {flag}")
    return value


def _load_vocab(cfg: RunConfig):
    path = Path(_require(cfg.ions, "--ions"))
    if not path.exists():
        raise CLIError(f"ions file not found: {path}")
    return load_ions(path)


def _load_dataset(cfg: RunConfig, path, cations, anions, prop) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise CLIError(f"records file not found: {path}")
    _, _, records = load_records(path, cations, anions)
    ds = Dataset.from_records(records, prop)
    if len(ds) == 0:
        raise CLIError(f"{path} holds no {prop} records")
    return ds


def _load(path, kind=None):
    path = Path(path)
    if not path.exists():
        raise CLIError(f"model file not found: {path}")
    return load_model(path, kind=kind)


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(rep) -> str:
    return f"R2={rep.r2:.4f} MAE={rep.mae:.6g} MAPE={rep.mape:.3f}% n={rep.n_records} ils={rep.n_ils}"


# ---------------------------------------------------------------- commands


def cmd_gen_synth(cfg: RunConfig):
    out = _out(cfg)
    data = emit_datasets(_oracle(cfg), _plan(cfg))
    write_ions(out / "ions.csv", data.cations, data.anions)
    pre = [r for ds in data.pretrain.values() for r in ds.records()]
    exp = [r for ds in data.experimental.values() for r in ds.records()]
    write_records(out / "pretrain.csv", pre, data.cations, data.anions)
    write_records(out / "experimental.csv", exp, data.cations, data.anions)
    print(f"wrote {len(pre)} pre-training and {len(exp)} experimental records to {out}")


def cmd_pretrain(cfg: RunConfig):
    cations, anions = _load_vocab(cfg)
    prop = _require(cfg.property, "--property")
    ds = _load_dataset(cfg, _require(cfg.records, "--records"), cations, anions, prop)
    res = pretrain(ds, (len(cations), len(anions)), pretrain_grid(cfg, prop), _settings(cfg))
    out = _out(cfg)
    save_model(res.model, out / f"encoder_{prop}.ilnrs", cations, anions)
    write_fold_report(out / f"pretrain_{prop}_folds.csv", search_rows(res, property=prop))
    _summary(out / f"pretrain_{prop}_summary.txt", [f"pretrain {prop}", f"best {res.best.config}", f"CV {_fmt(res.cv)}"])
    print(f"pretrain {prop}: CV {_fmt(res.cv)}")


def cmd_finetune(cfg: RunConfig):
    cations, anions = _load_vocab(cfg)
    prop = _require(cfg.property, "--property")
    ds = _load_dataset(cfg, _require(cfg.records, "--records"), cations, anions, prop)
    if cfg.baseline:
        encoder = random_encoder(PretrainConfig(), (len(cations), len(anions)), cfg.seed)
        tag = "baseline"
    else:
        encoder = load_model(_require(cfg.encoder, "--encoder")[0], kind="encoder", cations=cations, anions=anions)
        tag = encoder.source_property
    res = finetune(encoder, ds, finetune_grid(cfg, prop), _settings(cfg))
    out = _out(cfg)
    save_model(res.model, out / f"finetune_{prop}_from_{tag}.ilnrs", cations, anions)
    write_fold_report(out / f"finetune_{prop}_folds.csv", search_rows(res, source=tag, target=prop))
    _summary(out / f"finetune_{prop}_summary.txt", [f"finetune {prop} from {tag}", f"best {res.best.config}", f"CV {_fmt(res.cv)}"])
    print(f"finetune {prop} from {tag}: CV {_fmt(res.cv)}")


def cmd_transfer_matrix(cfg: RunConfig):
    cations, anions = _load_vocab(cfg)
    encoders = {}
    for path in _require(cfg.encoder, "--encoder"):
        enc = load_model(path, kind="encoder", cations=cations, anions=anions)
        encoders[enc.source_property] = enc
    records_path = Path(_require(cfg.records, "--records"))
    if not records_path.exists():
        raise CLIError(f"records file not found: {records_path}")
    _, _, records = load_records(records_path, cations, anions)
    datasets = split_by_property(records)
    cells = transfer_matrix(encoders, datasets, _settings(cfg), lambda p: finetune_grid(cfg, p))
    out = _out(cfg)
    rows = [
        {"source": c.source, "target": c.target, "within": c.within_property, "fold": f, "report": rep}
        for c in cells
        for f, rep in enumerate(c.folds)
    ]
    write_fold_report(out / "transfer_matrix_folds.csv", rows)
    lines = [f"{c.source:>14} -> {c.target:<16} {_fmt(c.mean)}" for c in cells]
    _summary(out / "transfer_matrix_summary.txt", lines)
    print("\n".join(lines))


def cmd_size_sweep(cfg: RunConfig):
    points = size_sweep(
        cfg.fractions,
        _oracle(cfg),
        _plan(cfg),
        _settings(cfg),
        source=cfg.source,
        pretrain_grid=pretrain_grid(cfg, cfg.source),
        grid_for=lambda p: finetune_grid(cfg, p),
    )
    out = _out(cfg)
    rows = []
    for pt in points:
        rows.append({"anions_per_cation": pt.anions_per_cation, "stage": "pretrain", "target": cfg.source, "report": pt.pretrain})
        for t, rep in pt.finetune.items():
            rows.append({"anions_per_cation": pt.anions_per_cation, "stage": "finetune", "target": t, "report": rep})
    write_fold_report(out / "size_sweep.csv", rows)
    lines = [f"n={r['anions_per_cation']:>3} {r['stage']:<8} {r['target']:<16} {_fmt(r['report'])}" for r in rows]
    _summary(out / "size_sweep_summary.txt", lines)
    print("\n".join(lines))


def _ion_id(vocab, name, flag):
    if name is None:
        raise CLIError(f"missing required option {flag}")
    if name not in vocab:
        near = ", ".join(vocab.closest(name)) or "none"
        raise CLIError(f"unknown {vocab.role} {name!r}; closest matches: {near}")
    return vocab.id(name)


def cmd_predict(cfg: RunConfig):
    model = _load(_require(cfg.model, "--model")[0], kind="finetune")
    cations, anions = model.vocabularies
    if cfg.property is not None and cfg.property != model.config.property:
        raise CLIError(f"model predicts {model.config.property}, not {cfg.property}")
    c = _ion_id(cations, cfg.cation, "--cation")
    a = _ion_id(anions, cfg.anion, "--anion")
    value = model.predict([c], [a], cfg.temperature, cfg.pressure)[0]
    print(repr(float(value)))


def cmd_full_space(cfg: RunConfig):
    models = {}
    vocab = None
    for path in _require(cfg.model, "--model"):
        m = _load(path)
        if not hasattr(m, "predict"):
            raise CLIError(f"{path} is an encoder; full-space prediction needs fine-tuned models")
        if vocab is not None and m.vocabularies != vocab:
            raise CLIError("all models must share one ion vocabulary")
        vocab = m.vocabularies
        models[m.config.property] = m
    out = _out(cfg)
    with open(out / "full_space.csv", "w", newline="", encoding="utf-8") as fh:
        rows = full_space_predict(fh, models, *vocab, cfg.temperature, cfg.pressure)
    print(f"wrote {rows} rows to {out / 'full_space.csv'}")


def cmd_audit(cfg: RunConfig):
    if cfg.synthetic:
        from .oracle import Oracle

        plan = _plan(cfg)
        oracle = Oracle(_oracle(cfg), plan.num_cations, plan.num_anions)
        c, a = np.divmod(np.arange(plan.num_cations * plan.num_anions), plan.num_anions)
        rho = oracle.true_property(c, a, "density", 298.0, 1.0)
        mu = np.exp(oracle.true_property(c, a, "ln_viscosity", 298.0, 1.0))
        sigma = oracle.true_property(c, a, "surface_tension", 298.0, 1.0)
    else:
        models = {}
        for path in _require(cfg.model, "--model"):
            m = _load(path, kind="finetune")
            models[m.config.property] = m
        need = {"density", "ln_viscosity", "surface_tension"}
        if not need <= set(models):
            raise CLIError(f"audit needs fine-tuned models for {', '.join(sorted(need - set(models)))}")
        n_cat, n_an = models["density"].encoder.vocab_sizes
        c, a = np.divmod(np.arange(n_cat * n_an), n_an)
        rho = models["density"].predict(c, a, 298.0, 1.0)
        mu = np.exp(models["ln_viscosity"].predict(c, a, 298.0, 1.0))
        sigma = models["surface_tension"].predict(c, a, 298.0, 1.0)
    res = correlation_audit(rho, mu, sigma)
    line = f"k3={res.k3:.6g} b={res.b:.6g} c={res.c:.6g} R2={res.r2:.6f}"
    _summary(_out(cfg) / "audit_summary.txt", [line])
    print(line)


def cmd_evaluate(cfg: RunConfig):
    model = _load(_require(cfg.model, "--model")[0], kind="finetune")
    cations, anions = model.vocabularies
    ds = _load_dataset(cfg, _require(cfg.records, "--records"), cations, anions, model.config.property)
    pred = model.predict(ds.cation, ds.anion, ds.temperature, ds.pressure)
    rep = metrics(pred, ds.value, len(ds.unique_ils()))
    _summary(_out(cfg) / "evaluate_summary.txt", [f"evaluate {model.config.property}", _fmt(rep)])
    print(_fmt(rep))


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "transfer-matrix": cmd_transfer_matrix,
    "size-sweep": cmd_size_sweep,
    "predict": cmd_predict,
    "full-space": cmd_full_space,
    "audit": cmd_audit,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ilnrs", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("pretrain", "finetune", "transfer-matrix"):
            p.add_argument("--ions")
        if name in ("pretrain", "finetune", "transfer-matrix", "evaluate"):
            p.add_argument("--records")
        if name in ("pretrain", "finetune", "predict"):
            p.add_argument("--property", choices=PROPERTIES)
        if name in ("finetune", "transfer-matrix"):
            p.add_argument("--encoder", action="append")
        if name == "finetune":
            p.add_argument("--baseline", action="store_true", default=None, help="use a random frozen encoder")
        if name in ("predict", "full-space", "audit", "evaluate"):
            p.add_argument("--model", action="append")
        if name in ("predict", "full-space"):
            p.add_argument("--temperature", type=float)
            p.add_argument("--pressure", type=float)
        if name == "predict":
            p.add_argument("--cation")
            p.add_argument("--anion")
        if name == "size-sweep":
            p.add_argument("--fractions", type=int, nargs="+")
            p.add_argument("--source", choices=PROPERTIES)
        if name == "audit":
            p.add_argument("--synthetic", action="store_true", default=None)
    return parser


def resolve(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if cfg.command not in (None, args.command):
        raise CLIError(f"config file is for {cfg.command!r}, not {args.command!r}")
    cfg.command = args.command
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None and f.name != "command":
            setattr(cfg, f.name, value)
    return cfg


def write_manifest(cfg: RunConfig, argv) -> None:
    manifest = {
        "command": cfg.command,
        "argv": list(argv),
        "resolved_config": asdict(cfg),
        "seed": cfg.seed,
        "ilnrs_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
    }
    out = _out(cfg)
    (out / f"manifest_{cfg.command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve(args)
        HANDLERS[cfg.command](cfg)
        write_manifest(cfg, argv)
    except (CLIError, DataFormatError, ArtifactError, ValueError, KeyError, OSError) as exc:
        print(f"ilnrs {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
