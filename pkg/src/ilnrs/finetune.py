"""Fine-tuning network: frozen encoder output plus scaled conditions into a small head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PROPERTIES, Dataset, Scaler, fit_scaler
from .nn import ConfigurationError, concat_cols, set_training
from .nrs import EncoderSnapshot, PretrainConfig, make_head, random_encoder, rng_for

FINETUNE_HEAD_WIDTHS = (50, 100, 200)
PRESSURE_PROPERTIES = ("density",)
IDENTITY = Scaler(0.0, 1.0)


@dataclass(frozen=True)
class FinetuneConfig:
    property: str = "density"
    head_width: int = 100
    dropout_rate: float = 0.05
    learning_rate: float = 0.01
    uses_temperature: bool = True
    uses_pressure: bool = False

    def __post_init__(self):
        if self.property not in PROPERTIES:
            raise ConfigurationError(f"unknown property {self.property!r}")
        if self.head_width <= 0 or self.head_width % 2:
            raise ConfigurationError("head_width must be a positive even number")
        if self.property == "melting_point" and (self.uses_temperature or self.uses_pressure):
            raise ConfigurationError("melting point is condition-free")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")

    @classmethod
    def for_property(cls, prop: str, **kw) -> "FinetuneConfig":
        """Default condition inputs: temperature unless melting point, pressure for density only."""
        kw.setdefault("uses_temperature", prop != "melting_point")
        kw.setdefault("uses_pressure", prop in PRESSURE_PROPERTIES)
        return cls(property=prop, **kw)

    def n_conditions(self) -> int:
        return int(self.uses_temperature) + int(self.uses_pressure)


class FinetuneModel:
    def __init__(self, encoder: EncoderSnapshot, config: FinetuneConfig, seed: int | None = 0):
        self.encoder = encoder
        self.config = config
        self.seed = seed
        rng = None if seed is None else rng_for(seed, 3)
        dseed = 0 if seed is None else int(rng_for(seed, 4).integers(2**31))
        self.head = make_head(self.input_width, config.head_width, config.dropout_rate, rng, dseed)
        self.target_scaler = IDENTITY
        self.temperature_scaler = IDENTITY
        self.pressure_scaler = IDENTITY

    @property
    def input_width(self) -> int:
        return self.encoder.width + self.config.n_conditions()

    def parameters(self) -> dict:
        return {f"head.{k}": p for k, p in self.head.parameters().items()}

    def fit_scalers(self, train: Dataset) -> None:
        """Standardisation statistics from training records only."""
        self.target_scaler = fit_scaler(train.value)
        if self.config.uses_temperature:
            self.temperature_scaler = fit_scaler(train.temperature)
        if self.config.uses_pressure:
            self.pressure_scaler = fit_scaler(train.pressure)

    def _condition(self, scaler: Scaler, values, n):
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), (n,))
        if not np.all(np.isfinite(values)):
            raise ValueError("conditions must be finite")
        if scaler.zero_variance:
            return np.zeros((n, 1))
        return scaler.transform(values).reshape(n, 1)

    def features(self, cation_ids, anion_ids, temperature=None, pressure=None) -> np.ndarray:
        enc = self.encoder.encode(cation_ids, anion_ids)
        n = enc.shape[0]
        parts = [enc]
        if self.config.uses_temperature:
            if temperature is None:
                raise ValueError(f"{self.config.property} needs a temperature")
            parts.append(self._condition(self.temperature_scaler, temperature, n))
        if self.config.uses_pressure:
            if pressure is None:
                raise ValueError(f"{self.config.property} needs a pressure")
            parts.append(self._condition(self.pressure_scaler, pressure, n))
        return concat_cols(parts)

    def dataset_features(self, ds: Dataset) -> np.ndarray:
        t = ds.temperature if self.config.uses_temperature else None
        p = ds.pressure if self.config.uses_pressure else None
        return self.features(ds.cation, ds.anion, t, p)

    def set_training(self, training: bool):
        set_training([self.head], training)

    def forward(self, features, training: bool = False) -> np.ndarray:
        self.set_training(training)
        return self.head.forward(features)

    def backward(self, grad):
        return self.head.backward(grad)

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def predict(self, cation_ids, anion_ids, temperature=None, pressure=None) -> np.ndarray:
        """Predictions in native property units."""
        scaled = self.forward(self.features(cation_ids, anion_ids, temperature, pressure))
        return self.target_scaler.inverse_transform(scaled[:, 0])


def build_finetune(encoder: EncoderSnapshot, config: FinetuneConfig, seed: int = 0) -> FinetuneModel:
    return FinetuneModel(encoder, config, seed)


def predict(model: FinetuneModel, cation_ids, anion_ids, temperature=None, pressure=None) -> np.ndarray:
    return model.predict(cation_ids, anion_ids, temperature, pressure)


def random_baseline(config: FinetuneConfig, encoder_config: PretrainConfig, vocab_sizes, seed: int) -> FinetuneModel:
    """Fine-tune model on an untrained, frozen encoder of the same architecture."""
    return FinetuneModel(random_encoder(encoder_config, vocab_sizes, seed), config, seed)
