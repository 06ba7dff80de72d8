"""Ion vocabularies, property records, pair sampling and IL-grouped folds."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

PROPERTIES = ("density", "ln_viscosity", "surface_tension", "heat_capacity", "melting_point")
PRETRAIN_PROPERTIES = ("density", "ln_viscosity", "heat_capacity")
UNITS = {
    "density": "kg/m3",
    "ln_viscosity": "ln(mPa s)",
    "surface_tension": "N/m",
    "heat_capacity": "J/(mol K)",
    "melting_point": "K",
}
RECORD_COLUMNS = ("cation", "anion", "property", "temperature_K", "pressure_bar", "value")
ION_COLUMNS = ("role", "name")
REFERENCE_T = 298.0
REFERENCE_P = 1.0


class DataFormatError(ValueError):
    """Malformed input file; the message carries the offending line number."""


class IonVocabulary:
    """Bijection between ion names and contiguous 0-based ids for one role."""

    def __init__(self, role: str, names=()):
        if role not in ("cation", "anion"):
            raise ValueError(f"role must be 'cation' or 'anion', got {role!r}")
        self.role = role
        self.names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            if name in self._ids:
                raise ValueError(f"duplicate {role} name {name!r}")
            self.add(name)

    def add(self, name: str) -> int:
        """Return the id of ``name``, appending it if unseen."""
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self.names)
            self.names.append(name)
            self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise KeyError(f"unknown {self.role} {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, IonVocabulary) and self.role == other.role and self.names == other.names

    def fingerprint(self) -> str:
        return vocabulary_fingerprint(self.names)

    def closest(self, name: str, n: int = 3) -> list[str]:
        import difflib

        return difflib.get_close_matches(name, self.names, n=n, cutoff=0.0)


def vocabulary_fingerprint(names) -> str:
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


class ILKey(NamedTuple):
    cation_id: int
    anion_id: int


@dataclass(frozen=True)
class PropertyRecord:
    il: ILKey
    property: str
    temperature: float
    pressure: float
    value: float


@dataclass
class Dataset:
    """Column-oriented records of a single property."""

    property: str
    cation: np.ndarray
    anion: np.ndarray
    temperature: np.ndarray
    pressure: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.cation = np.asarray(self.cation, dtype=np.int64)
        self.anion = np.asarray(self.anion, dtype=np.int64)
        self.temperature = np.asarray(self.temperature, dtype=np.float64)
        self.pressure = np.asarray(self.pressure, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        n = len(self.cation)
        if not all(len(a) == n for a in (self.anion, self.temperature, self.pressure, self.value)):
            raise ValueError("dataset columns differ in length")

    def __len__(self):
        return len(self.value)

    @classmethod
    def from_records(cls, records, prop: str) -> "Dataset":
        rows = [r for r in records if r.property == prop]
        return cls(
            prop,
            [r.il.cation_id for r in rows],
            [r.il.anion_id for r in rows],
            [r.temperature for r in rows],
            [r.pressure for r in rows],
            [r.value for r in rows],
        )

    def records(self) -> list[PropertyRecord]:
        return [
            PropertyRecord(ILKey(int(c), int(a)), self.property, float(t), float(p), float(v))
            for c, a, t, p, v in zip(self.cation, self.anion, self.temperature, self.pressure, self.value)
        ]

    def il_keys(self) -> list[ILKey]:
        return [ILKey(int(c), int(a)) for c, a in zip(self.cation, self.anion)]

    def unique_ils(self) -> set[ILKey]:
        return set(self.il_keys())

    def subset(self, mask_or_index) -> "Dataset":
        return Dataset(
            self.property,
            self.cation[mask_or_index],
            self.anion[mask_or_index],
            self.temperature[mask_or_index],
            self.pressure[mask_or_index],
            self.value[mask_or_index],
        )

    def canonical(self) -> "Dataset":
        """Rows sorted by (cation, anion, T, P, value) so results ignore input order."""
        order = np.lexsort((self.value, self.pressure, self.temperature, self.anion, self.cation))
        return self.subset(order)


def _parse_float(text, column, lineno):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"line {lineno}: non-numeric {column} {text!r}") from None
    if not np.isfinite(value):
        raise DataFormatError(f"line {lineno}: non-finite {column} {text!r}")
    return value


def _check_header(reader, expected, path):
    header = reader.fieldnames
    if header is None:
        raise DataFormatError(f"{path}: missing header row")
    missing = [c for c in expected if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing column(s) {', '.join(missing)}")


def load_ions(path) -> tuple[IonVocabulary, IonVocabulary]:
    """Read a ``role,name`` CSV into cation and anion vocabularies."""
    cations, anions = IonVocabulary("cation"), IonVocabulary("anion")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, ION_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            role, name = row["role"], row["name"]
            if role == "cation":
                cations.add(name)
            elif role == "anion":
                anions.add(name)
            else:
                raise DataFormatError(f"line {lineno}: unknown role {role!r}")
    return cations, anions


def write_ions(path, cations: IonVocabulary, anions: IonVocabulary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ION_COLUMNS)
        for name in cations.names:
            w.writerow(("cation", name))
        for name in anions.names:
            w.writerow(("anion", name))


def load_records(path, cations: IonVocabulary | None = None, anions: IonVocabulary | None = None):
    """Read a records CSV.

    Without vocabularies, ids are assigned in order of first appearance.
    With vocabularies, every ion name must already be known to them.

    Returns ``(cations, anions, records)``.
    """
    fixed = cations is not None
    if fixed and anions is None:
        raise ValueError("pass both vocabularies or neither")
    if not fixed:
        cations, anions = IonVocabulary("cation"), IonVocabulary("anion")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, RECORD_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            prop = row["property"]
            if prop not in PROPERTIES:
                raise DataFormatError(f"line {lineno}: unknown property tag {prop!r}")
            t = _parse_float(row["temperature_K"], "temperature_K", lineno)
            p = _parse_float(row["pressure_bar"], "pressure_bar", lineno)
            v = _parse_float(row["value"], "value", lineno)
            if t <= 0:
                raise DataFormatError(f"line {lineno}: temperature must be positive, got {t}")
            if p <= 0:
                raise DataFormatError(f"line {lineno}: pressure must be positive, got {p}")
            c_name, a_name = row["cation"], row["anion"]
            if fixed:
                if c_name not in cations or a_name not in anions:
                    missing = c_name if c_name not in cations else a_name
                    raise DataFormatError(f"line {lineno}: ion {missing!r} not in vocabulary")
                key = ILKey(cations.id(c_name), anions.id(a_name))
            else:
                key = ILKey(cations.add(c_name), anions.add(a_name))
            records.append(PropertyRecord(key, prop, t, p, v))
    return cations, anions, records


def write_records(path, records, cations: IonVocabulary, anions: IonVocabulary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(
                (
                    cations.names[r.il.cation_id],
                    anions.names[r.il.anion_id],
                    r.property,
                    repr(float(r.temperature)),
                    repr(float(r.pressure)),
                    repr(float(r.value)),
                )
            )


def sample_pairs(cations: int, anions: int, anions_per_cation: int, seed: int) -> list[ILKey]:
    """Stratified sampling: ``anions_per_cation`` distinct anions for every cation."""
    if not 0 < anions_per_cation <= anions:
        raise ValueError(f"anions_per_cation must lie in [1, {anions}], got {anions_per_cation}")
    rng = np.random.default_rng(seed)
    pairs = []
    for c in range(cations):
        chosen = rng.choice(anions, size=anions_per_cation, replace=False)
        pairs.extend(ILKey(c, int(a)) for a in chosen)
    return pairs


def exclude_ils(pairs, forbidden) -> list[ILKey]:
    forbidden = set(forbidden)
    return [p for p in pairs if p not in forbidden]


@dataclass
class FoldPlan:
    k: int
    assignment: dict = field(default_factory=dict)

    def fold_of(self, keys) -> np.ndarray:
        return np.array([self.assignment[ILKey(*key)] for key in keys], dtype=np.int64)

    def test_mask(self, dataset: Dataset, fold: int) -> np.ndarray:
        folds = self.fold_of(zip(dataset.cation.tolist(), dataset.anion.tolist()))
        return folds == fold

    def fold_sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts


def _keys_of(records):
    if isinstance(records, Dataset):
        return set(zip(records.cation.tolist(), records.anion.tolist()))
    return {r.il if isinstance(r, PropertyRecord) else r for r in records}


def kfold_by_il(records, k: int, seed: int, group: str = "il") -> FoldPlan:
    """Assign whole ILs to ``k`` folds.

    Distinct IL keys are sorted, shuffled with ``seed`` and dealt round-robin,
    so the plan does not depend on record order. ``group="cation"`` deals whole
    cations instead, giving cation-disjoint folds.
    """
    if k < 2:
        raise ValueError("k-fold splitting needs k >= 2")
    keys = sorted(ILKey(*key) for key in _keys_of(records))
    rng = np.random.default_rng(seed)
    if group == "il":
        if len(keys) < k:
            raise ValueError(f"{len(keys)} distinct ILs cannot fill {k} folds")
        order = rng.permutation(len(keys))
        return FoldPlan(k, {keys[j]: i % k for i, j in enumerate(order)})
    if group == "cation":
        cats = sorted({key.cation_id for key in keys})
        if len(cats) < k:
            raise ValueError(f"{len(cats)} distinct cations cannot fill {k} folds")
        order = rng.permutation(len(cats))
        fold_of_cat = {cats[j]: i % k for i, j in enumerate(order)}
        return FoldPlan(k, {key: fold_of_cat[key.cation_id] for key in keys})
    raise ValueError(f"unknown grouping {group!r}")


@dataclass(frozen=True)
class Scaler:
    mean: float
    std: float
    zero_variance: bool = False

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_scaler(values) -> Scaler:
    """Population mean and standard deviation; a constant column gets std 1."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot fit a scaler on zero values")
    if np.ptp(values) == 0.0:
        return Scaler(float(values[0]), 1.0, True)
    mean = float(values.mean())
    std = float(values.std())
    if not std > 0.0:
        return Scaler(mean, 1.0, True)
    return Scaler(mean, std)


def split_by_property(records) -> dict[str, Dataset]:
    props = [p for p in PROPERTIES if any(r.property == p for r in records)]
    return {p: Dataset.from_records(records, p) for p in props}
