"""Versioned model artifacts.

Layout::

    ILNRS\\n
    <one-line JSON header>\\n
    <tensor payload: float64 little-endian, row-major, in header order>
    <32-byte SHA-256 of everything above>

The header is plain text so ``head -2`` shows the metadata.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import IonVocabulary, Scaler, vocabulary_fingerprint
from .finetune import FinetuneConfig, FinetuneModel
from .nrs import EncoderSnapshot, PretrainConfig, export_encoder, PretrainModel

MAGIC = b"ILNRS\n"
FORMAT_VERSION = 1
_DIGEST = 32
_LE_F64 = np.dtype("<f8")


class ArtifactError(Exception):
    pass


class PayloadError(ArtifactError):
    pass


class VersionError(ArtifactError):
    pass


class KindError(ArtifactError):
    pass


class FingerprintError(ArtifactError):
    pass


class ShapeError(ArtifactError):
    pass


def _scaler_dict(s: Scaler) -> dict:
    return {"mean": s.mean, "std": s.std, "zero_variance": s.zero_variance}


def _vocab_dict(v: IonVocabulary) -> dict:
    return {"names": list(v.names), "fingerprint": v.fingerprint()}


def _encoder_tensors(enc: EncoderSnapshot, prefix=""):
    return {prefix + k: p.value for k, p in enc.parameters().items()}


def _blank_encoder(arch: dict) -> EncoderSnapshot:
    cfg = PretrainConfig(**arch["encoder"])
    return export_encoder(PretrainModel(cfg, tuple(arch["vocab_sizes"]), seed=None))


def _write_atomic(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model, path, cations: IonVocabulary, anions: IonVocabulary) -> None:
    """Write an encoder snapshot or a fine-tuned model, bound to its vocabularies."""
    path = Path(path)
    if isinstance(model, PretrainModel):
        model = export_encoder(model)
    enc = model.encoder if isinstance(model, FinetuneModel) else model
    if not isinstance(enc, EncoderSnapshot):
        raise TypeError(f"cannot save {type(model).__name__}")
    if enc.vocab_sizes != (len(cations), len(anions)):
        raise FingerprintError("vocabulary sizes do not match the model's embedding tables")
    arch = {"encoder": asdict(enc.config), "vocab_sizes": list(enc.vocab_sizes)}
    header = {
        "format_version": FORMAT_VERSION,
        "vocabularies": {"cation": _vocab_dict(cations), "anion": _vocab_dict(anions)},
        "source_property": enc.source_property,
    }
    if isinstance(model, FinetuneModel):
        arch["finetune"] = asdict(model.config)
        header["kind"] = "finetune"
        header["property"] = model.config.property
        header["scalers"] = {
            "target": _scaler_dict(model.target_scaler),
            "temperature": _scaler_dict(model.temperature_scaler),
            "pressure": _scaler_dict(model.pressure_scaler),
        }
        tensors = _encoder_tensors(enc, "encoder.")
        tensors.update({k: p.value for k, p in model.parameters().items()})
    else:
        header["kind"] = "encoder"
        header["property"] = enc.source_property
        tensors = _encoder_tensors(enc)
    header["architecture"] = arch

    chunks, table, offset = [], [], 0
    for name, value in tensors.items():
        raw = np.ascontiguousarray(value, dtype=_LE_F64).tobytes()
        table.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header["tensors"] = table
    header["payload_bytes"] = offset
    body = MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(chunks)
    _write_atomic(path, body + hashlib.sha256(body).digest())


def read_artifact(path):
    """Verify integrity and return ``(header, {name: array})``."""
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ArtifactError(f"{path}: not an ILNRS artifact (bad magic)")
    if len(blob) < len(MAGIC) + _DIGEST:
        raise PayloadError(f"{path}: truncated artifact")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise PayloadError(f"{path}: checksum mismatch (truncated or corrupted)")
    end = body.find(b"\n", len(MAGIC))
    if end < 0:
        raise PayloadError(f"{path}: missing header")
    try:
        header = json.loads(body[len(MAGIC) : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {header.get('format_version')!r}, expected {FORMAT_VERSION}")
    payload = body[end + 1 :]
    if len(payload) != header["payload_bytes"]:
        raise PayloadError(f"{path}: payload has {len(payload)} bytes, header says {header['payload_bytes']}")
    tensors = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if t["nbytes"] != 8 * int(np.prod(shape)) or t["offset"] + t["nbytes"] > len(payload):
            raise PayloadError(f"{path}: tensor {t['name']} does not fit the payload")
        raw = payload[t["offset"] : t["offset"] + t["nbytes"]]
        tensors[t["name"]] = np.frombuffer(raw, dtype=_LE_F64).astype(np.float64).reshape(shape)
    for role, v in header["vocabularies"].items():
        if vocabulary_fingerprint(v["names"]) != v["fingerprint"]:
            raise FingerprintError(f"{path}: {role} vocabulary does not match its fingerprint")
    return header, tensors


def _fill(params: dict, tensors: dict, prefix: str) -> None:
    for name, p in params.items():
        key = prefix + name
        if key not in tensors:
            raise ShapeError(f"artifact lacks tensor {key!r}")
        if tensors[key].shape != p.shape:
            raise ShapeError(f"tensor {key!r} has shape {tensors[key].shape}, architecture expects {p.shape}")
        writeable = p.value.flags.writeable
        p.value.flags.writeable = True
        p.value[...] = tensors[key]
        p.value.flags.writeable = writeable


def load_model(path, kind: str | None = None, cations: IonVocabulary | None = None, anions: IonVocabulary | None = None):
    """Load an artifact; ``kind`` and vocabularies, when given, must match."""
    header, tensors = read_artifact(path)
    if kind is not None and header["kind"] != kind:
        raise KindError(f"{path}: expected a {kind} artifact, found {header['kind']}")
    vocabs = header["vocabularies"]
    for given, role in ((cations, "cation"), (anions, "anion")):
        if given is not None and given.fingerprint() != vocabs[role]["fingerprint"]:
            raise FingerprintError(f"{path}: {role} vocabulary differs from the one the model was trained on")
    arch = header["architecture"]
    if [len(vocabs["cation"]["names"]), len(vocabs["anion"]["names"])] != arch["vocab_sizes"]:
        raise ShapeError(f"{path}: vocabulary sizes disagree with the architecture")
    enc = _blank_encoder(arch)
    enc.source_property = header["source_property"]
    if header["kind"] == "encoder":
        model = enc
        _fill(enc.parameters(), tensors, "")
        expected = set(enc.parameters())
    elif header["kind"] == "finetune":
        _fill(enc.parameters(), tensors, "encoder.")
        model = FinetuneModel(enc, FinetuneConfig(**arch["finetune"]), seed=None)
        _fill(model.parameters(), tensors, "")
        sc = header["scalers"]
        model.target_scaler = Scaler(**sc["target"])
        model.temperature_scaler = Scaler(**sc["temperature"])
        model.pressure_scaler = Scaler(**sc["pressure"])
        expected = {"encoder." + k for k in enc.parameters()} | set(model.parameters())
    else:
        raise KindError(f"{path}: unknown artifact kind {header['kind']!r}")
    extra = set(tensors) - expected
    if extra:
        raise ShapeError(f"{path}: unexpected tensors {sorted(extra)}")
    model.vocabularies = (
        IonVocabulary("cation", vocabs["cation"]["names"]),
        IonVocabulary("anion", vocabs["anion"]["names"]),
    )
    return model
