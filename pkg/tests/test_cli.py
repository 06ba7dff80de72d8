import json

import numpy as np
import pytest

from ilnrs.cli import main
from ilnrs.data import IonVocabulary, load_records
from ilnrs.finetune import FinetuneConfig, build_finetune
from ilnrs.nrs import PretrainConfig, random_encoder
from ilnrs.persist import save_model

TINY_PLAN = {"num_cations": 20, "num_anions": 8, "anions_per_cation": 3, "experimental_ils": 40}
QUICK = {"batch_size": 64, "max_epochs": 6, "patience": 2}


def _config(tmp_path, **kw):
    path = tmp_path / f"cfg_{len(list(tmp_path.iterdir()))}.json"
    path.write_text(json.dumps(kw))
    return str(path)


def _model_file(tmp_path, n_cat=6, n_an=4, prop="density"):
    cats = IonVocabulary("cation", [f"cation{i}" for i in range(n_cat)])
    ans = IonVocabulary("anion", [f"anion{i}" for i in range(n_an)])
    enc = random_encoder(PretrainConfig(), (n_cat, n_an), seed=0)
    path = tmp_path / f"{prop}.ilnrs"
    save_model(build_finetune(enc, FinetuneConfig.for_property(prop), seed=1), path, cats, ans)
    return str(path)


def test_gen_synth_is_deterministic(tmp_path):
    cfg = _config(tmp_path, plan=TINY_PLAN)
    for name in ("a", "b"):
        assert main(["gen-synth", "--seed", "7", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("ions.csv", "pretrain.csv", "experimental.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest_gen-synth.json").read_text())
    assert manifest["seed"] == 7 and manifest["resolved_config"]["plan"] == TINY_PLAN


def test_gen_synth_does_not_touch_config(tmp_path):
    cfg = _config(tmp_path, plan=TINY_PLAN)
    before = open(cfg).read()
    main(["gen-synth", "--config", cfg, "--out", str(tmp_path / "o")])
    assert open(cfg).read() == before


def test_unknown_config_key(tmp_path, capsys):
    assert main(["gen-synth", "--config", _config(tmp_path, bogus=1), "--out", str(tmp_path)]) != 0
    assert "bogus" in capsys.readouterr().err


def test_predict_prints_value(tmp_path, capsys):
    model = _model_file(tmp_path)
    code = main(["predict", "--model", model, "--cation", "cation2", "--anion", "anion1", "--temperature", "310", "--property", "density", "--out", str(tmp_path)])
    assert code == 0
    assert np.isfinite(float(capsys.readouterr().out.strip()))
    assert (tmp_path / "manifest_predict.json").exists()


def test_predict_unknown_ion_lists_matches(tmp_path, capsys):
    model = _model_file(tmp_path)
    code = main(["predict", "--model", model, "--cation", "cation9x", "--anion", "anion1", "--temperature", "300", "--out", str(tmp_path)])
    assert code != 0
    err = capsys.readouterr().err
    assert "cation9x" in err and "closest matches" in err and "cation" in err


def test_predict_missing_model(tmp_path, capsys):
    code = main(["predict", "--model", str(tmp_path / "nope.ilnrs"), "--cation", "a", "--anion", "b", "--out", str(tmp_path)])
    assert code != 0
    assert "not found" in capsys.readouterr().err


def test_predict_property_mismatch(tmp_path):
    model = _model_file(tmp_path)
    assert main(["predict", "--model", model, "--cation", "cation0", "--anion", "anion0", "--property", "heat_capacity", "--out", str(tmp_path)]) != 0


def test_synthetic_audit(tmp_path, capsys):
    assert main(["audit", "--synthetic", "--config", _config(tmp_path, oracle={"surface_tension_k3": 0.01}), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "b=0.3 " in out and "c=1.2 " in out and "R2=1.000000" in out


def test_end_to_end_small(tmp_path, capsys):
    cfg = _config(tmp_path, plan=TINY_PLAN, settings=QUICK)
    data = tmp_path / "data"
    assert main(["gen-synth", "--config", cfg, "--out", str(data)]) == 0
    ions, pre, exp = str(data / "ions.csv"), str(data / "pretrain.csv"), str(data / "experimental.csv")
    run = tmp_path / "run"
    assert main(["pretrain", "--config", cfg, "--ions", ions, "--records", pre, "--property", "density", "--out", str(run)]) == 0
    encoder = str(run / "encoder_density.ilnrs")
    assert main(["finetune", "--config", cfg, "--ions", ions, "--records", exp, "--property", "melting_point", "--encoder", encoder, "--out", str(run)]) == 0
    assert (run / "finetune_melting_point_folds.csv").exists()
    model = str(run / "finetune_melting_point_from_density.ilnrs")
    assert main(["evaluate", "--model", model, "--records", exp, "--out", str(run)]) == 0
    assert main(["full-space", "--model", model, "--out", str(run)]) == 0
    assert (run / "full_space.csv").read_text().count("\n") == 20 * 8 + 1
    _, _, records = load_records(exp)
    assert len(records) > 0


def test_full_space_large_vocabulary(tmp_path, capsys):
    model = _model_file(tmp_path, 2268, 311, prop="melting_point")
    assert main(["full-space", "--model", model, "--out", str(tmp_path)]) == 0
    with open(tmp_path / "full_space.csv") as fh:
        rows = sum(1 for _ in fh) - 1
    assert rows == 705_348
