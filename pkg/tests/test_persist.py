import hashlib
import json

import numpy as np
import pytest

from ilnrs.data import Dataset, IonVocabulary
from ilnrs.finetune import FinetuneConfig, build_finetune, predict
from ilnrs.nrs import PretrainConfig, build_pretrain, encode, export_encoder
from ilnrs.persist import (
    MAGIC,
    ArtifactError,
    FingerprintError,
    KindError,
    PayloadError,
    VersionError,
    load_model,
    read_artifact,
    save_model,
)

VOCAB = (IonVocabulary("cation", [f"cat{i}" for i in range(9)]), IonVocabulary("anion", [f"an{i}" for i in range(7)]))


@pytest.fixture(scope="module")
def finetuned():
    enc = export_encoder(build_pretrain(PretrainConfig(property="heat_capacity", blocks_per_branch=2), (9, 7), seed=3))
    model = build_finetune(enc, FinetuneConfig.for_property("density", uses_pressure=True, head_width=50), seed=4)
    rng = np.random.default_rng(0)
    ds = Dataset("density", rng.integers(0, 9, 40), rng.integers(0, 7, 40), rng.uniform(280, 370, 40), rng.choice([1.0, 50.0], 40), rng.normal(1200, 50, 40))
    model.fit_scalers(ds)
    return model


def _queries(n=1000, seed=1):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 9, n), rng.integers(0, 7, n), rng.uniform(273, 473, n), rng.uniform(0.5, 100, n)


def test_finetune_round_trip_bitwise(tmp_path, finetuned):
    path = tmp_path / "m.ilnrs"
    save_model(finetuned, path, *VOCAB)
    loaded = load_model(path, kind="finetune")
    q = _queries()
    assert np.array_equal(predict(finetuned, *q), predict(loaded, *q))
    assert loaded.vocabularies == VOCAB
    assert loaded.target_scaler == finetuned.target_scaler


def test_encoder_round_trip(tmp_path):
    model = build_pretrain(PretrainConfig(), (9, 7), seed=5)
    path = tmp_path / "e.ilnrs"
    save_model(model, path, *VOCAB)
    enc = load_model(path, kind="encoder", cations=VOCAB[0], anions=VOCAB[1])
    c, a, _, _ = _queries(200)
    assert np.array_equal(encode(export_encoder(model), c, a), encode(enc, c, a))
    assert enc.source_property == "density"


def test_saving_twice_is_byte_identical(tmp_path, finetuned):
    save_model(finetuned, tmp_path / "a", *VOCAB)
    save_model(finetuned, tmp_path / "b", *VOCAB)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_truncation_rejected(tmp_path, finetuned):
    path = tmp_path / "m.ilnrs"
    save_model(finetuned, path, *VOCAB)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(PayloadError):
        load_model(path)


def test_wrong_kind(tmp_path):
    path = tmp_path / "e.ilnrs"
    save_model(build_pretrain(PretrainConfig(), (9, 7), seed=0), path, *VOCAB)
    with pytest.raises(KindError):
        load_model(path, kind="finetune")


def _rewrite_header(path, edit):
    body = path.read_bytes()[:-32]
    end = body.find(b"\n", len(MAGIC))
    header = json.loads(body[len(MAGIC) : end])
    edit(header)
    body = MAGIC + json.dumps(header, sort_keys=True).encode() + body[end:]
    path.write_bytes(body + hashlib.sha256(body).digest())


def test_version_and_fingerprint_mismatch(tmp_path, finetuned):
    path = tmp_path / "m.ilnrs"
    save_model(finetuned, path, *VOCAB)
    with pytest.raises(FingerprintError):
        load_model(path, cations=IonVocabulary("cation", [f"cat{i}" for i in range(8)] + ["other"]))
    _rewrite_header(path, lambda h: h.update(format_version=99))
    with pytest.raises(VersionError):
        load_model(path)
    save_model(finetuned, path, *VOCAB)
    _rewrite_header(path, lambda h: h["vocabularies"]["anion"]["names"].reverse())
    with pytest.raises(FingerprintError):
        load_model(path)


def test_vocabulary_size_mismatch_on_save(tmp_path, finetuned):
    with pytest.raises(FingerprintError):
        save_model(finetuned, tmp_path / "x", VOCAB[0], IonVocabulary("anion", ["a"]))


def test_random_corruption_always_rejected(tmp_path, finetuned):
    path = tmp_path / "m.ilnrs"
    save_model(finetuned, path, *VOCAB)
    blob = path.read_bytes()
    rng = np.random.default_rng(7)
    for trial in range(200):
        bad = bytearray(blob)
        pos = int(rng.integers(len(bad)))
        bad[pos] ^= int(rng.integers(1, 256))
        path.write_bytes(bytes(bad))
        with pytest.raises(ArtifactError):
            read_artifact(path)
    for cut in (0, 5, 100, len(blob) // 2, len(blob) - 33):
        path.write_bytes(blob[:cut])
        with pytest.raises(ArtifactError):
            read_artifact(path)
