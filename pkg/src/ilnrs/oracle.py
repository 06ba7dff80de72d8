"""Synthetic stand-in for simulated and measured ionic-liquid properties.

Every ion carries a hidden 8-dimensional feature vector. Property surfaces
are smooth functions of a pair's features plus temperature and pressure,
with a shared latent direction so that the five properties are correlated.
Models never see the hidden features, only ion ids and conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    PRETRAIN_PROPERTIES,
    PROPERTIES,
    REFERENCE_P,
    REFERENCE_T,
    Dataset,
    IonVocabulary,
    exclude_ils,
    sample_pairs,
)

LATENT_DIM = 8
T_RANGE = (273.0, 473.0)
P_RANGE = (0.5, 100.0)

_STREAM_IONS, _STREAM_WEIGHTS, _STREAM_PAIRS, _STREAM_EXP, _STREAM_NOISE, _STREAM_OUTLIERS = range(1, 7)


def _rng(seed, stream, *extra):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, *extra]))


@dataclass(frozen=True)
class LatentIonFeatures:
    cation_z: np.ndarray
    anion_z: np.ndarray

    @property
    def cation_size(self):
        return np.exp(0.25 * self.cation_z[:, 0])

    @property
    def anion_size(self):
        return np.exp(0.25 * self.anion_z[:, 0])


def generate_ions(num_cations: int, num_anions: int, seed: int) -> LatentIonFeatures:
    if num_cations <= 0 or num_anions <= 0:
        raise ValueError("ion counts must be positive")
    rng = _rng(seed, _STREAM_IONS)
    return LatentIonFeatures(
        rng.standard_normal((num_cations, LATENT_DIM)),
        rng.standard_normal((num_anions, LATENT_DIM)),
    )


def _default_noise():
    return {
        "density": 2.0,
        "ln_viscosity": 0.05,
        "surface_tension": 2e-4,
        "heat_capacity": 2.0,
        "melting_point": 2.0,
    }


def _default_bias():
    # (multiplicative, additive) applied to simulated pre-training values
    return {"density": (1.02, 5.0), "ln_viscosity": (1.02, 0.1), "heat_capacity": (1.02, 5.0)}


@dataclass(frozen=True)
class OracleConfig:
    seed: int = 0
    noise_std: dict = field(default_factory=_default_noise)
    simulation_bias: dict = field(default_factory=_default_bias)
    outlier_fraction: float = 0.001
    outlier_magnitude: float = 80.0
    surface_tension_exponents: tuple = (0.3, 1.2)
    surface_tension_k3: float | None = None
    latent_scale: float = 0.75
    property_specific: float = 0.25
    interaction_scale: float = 0.05
    tanh_weight: float = 0.03

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if not 0.0 <= self.property_specific <= 1.0:
            raise ValueError("property_specific must lie in [0, 1]")
        if any(v < 0 for v in self.noise_std.values()):
            raise ValueError("noise_std must be non-negative")
        unknown = (set(self.noise_std) | set(self.simulation_bias)) - set(PROPERTIES)
        if unknown:
            raise ValueError(f"unknown property tag(s): {sorted(unknown)}")

    @classmethod
    def noiseless(cls, seed=0, **kw):
        return cls(seed=seed, noise_std={}, simulation_bias={}, outlier_fraction=0.0, **kw)

    @property
    def k3(self) -> float:
        """Surface-tension prefactor; by default 0.04 N/m at the mean IL at 298 K."""
        if self.surface_tension_k3 is not None:
            return self.surface_tension_k3
        b, c = self.surface_tension_exponents
        ln_mu_ref = 1.5 + 800.0 / (REFERENCE_T - 150.0)
        return float(np.exp(np.log(0.04) - b * ln_mu_ref - c * np.log(1250.0)))


@dataclass(frozen=True)
class SamplingPlan:
    num_cations: int = 200
    num_anions: int = 60
    anions_per_cation: int = 9
    experimental_ils: int = 150
    temperatures_per_il: tuple = (5, 9)
    temperature_grid: tuple = tuple(283.15 + 10.0 * i for i in range(10))
    density_pressures: tuple = (1.0, 10.0, 50.0, 100.0)
    popularity_exponent: float = 1.0

    def __post_init__(self):
        lo, hi = self.temperatures_per_il
        if not 1 <= lo <= hi <= len(self.temperature_grid):
            raise ValueError("temperatures_per_il must fit inside temperature_grid")
        if not 0 < self.anions_per_cation <= self.num_anions:
            raise ValueError("anions_per_cation out of range")
        if self.experimental_ils > self.num_cations * self.num_anions:
            raise ValueError("more experimental ILs than possible pairs")


class Oracle:
    """Noise-free ground truth over a fixed ion universe."""

    def __init__(self, config: OracleConfig, num_cations: int, num_anions: int):
        self.config = config
        self.features = generate_ions(num_cations, num_anions, config.seed)
        self.weights, self.tanh_weights = self._latent_weights()

    @property
    def num_cations(self):
        return len(self.features.cation_z)

    @property
    def num_anions(self):
        return len(self.features.anion_z)

    def _latent_weights(self):
        cfg = self.config
        rng = _rng(cfg.seed, _STREAM_WEIGHTS)
        mask = np.r_[np.ones(2 * LATENT_DIM), np.full(LATENT_DIM, cfg.interaction_scale)]

        def direction():
            u = mask * rng.standard_normal(3 * LATENT_DIM)
            return u / np.linalg.norm(u)

        shared = direction()
        lam = cfg.property_specific
        cols = []
        for _ in range(4):
            w = np.sqrt(1.0 - lam**2) * shared + lam * direction()
            cols.append(cfg.latent_scale * w / np.linalg.norm(w))
        signs = rng.choice([-1.0, 1.0], size=4)
        return np.stack(cols, axis=1), cfg.tanh_weight * signs

    def interaction(self, cation_ids, anion_ids) -> np.ndarray:
        """Latent interaction terms g1..g4, shape (B, 4)."""
        zc = self.features.cation_z[np.asarray(cation_ids)]
        za = self.features.anion_z[np.asarray(anion_ids)]
        phi = np.concatenate([zc, za, zc * za], axis=1)
        coupling = np.tanh((zc * za).sum(axis=1) / np.sqrt(LATENT_DIM))
        return phi @ self.weights + coupling[:, None] * self.tanh_weights

    def true_property(self, cation_ids, anion_ids, prop, temperature, pressure) -> np.ndarray:
        cation_ids = np.atleast_1d(cation_ids)
        anion_ids = np.atleast_1d(anion_ids)
        t = np.broadcast_to(np.asarray(temperature, dtype=np.float64), cation_ids.shape)
        p = np.broadcast_to(np.asarray(pressure, dtype=np.float64), cation_ids.shape)
        if prop != "melting_point":
            if np.any((t < T_RANGE[0]) | (t > T_RANGE[1])):
                raise ValueError(f"temperature outside {T_RANGE} K")
            if np.any((p < P_RANGE[0]) | (p > P_RANGE[1])):
                raise ValueError(f"pressure outside {P_RANGE} bar")
        g = self.interaction(cation_ids, anion_ids)
        if prop == "density":
            return _density(g, t, p)
        if prop == "ln_viscosity":
            return _ln_viscosity(g, t)
        if prop == "surface_tension":
            b, c = self.config.surface_tension_exponents
            return surface_tension_from(np.exp(_ln_viscosity(g, t)), _density(g, t, p), self.config.k3, b, c)
        if prop == "heat_capacity":
            return 300.0 + 120.0 * g[:, 2] + 0.8 * (t - 298.0)
        if prop == "melting_point":
            return 280.0 + 60.0 * g[:, 3]
        raise ValueError(f"unknown property {prop!r}")


def _density(g, t, p):
    return 1250.0 + 150.0 * g[:, 0] - 0.6 * (t - 298.0) + 0.045 * (p - 1.0)


def _ln_viscosity(g, t):
    return 1.5 + 2.0 * g[:, 1] + 800.0 / (t - 150.0)


def surface_tension_from(viscosity, density, k3, b, c):
    return k3 * np.power(viscosity, b) * np.power(density, c)


def true_property(oracle: Oracle, il, prop, temperature, pressure) -> float:
    return float(oracle.true_property([il[0]], [il[1]], prop, temperature, pressure)[0])


@dataclass
class SyntheticData:
    oracle: Oracle
    cations: IonVocabulary
    anions: IonVocabulary
    pretrain: dict
    experimental: dict
    pretrain_pairs: list

    def all_records(self):
        out = []
        for ds in (*self.pretrain.values(), *self.experimental.values()):
            out.extend(ds.records())
        return out


def ion_vocabularies(num_cations, num_anions):
    width_c, width_a = len(str(num_cations - 1)), len(str(num_anions - 1))
    return (
        IonVocabulary("cation", [f"C{i:0{width_c}d}" for i in range(num_cations)]),
        IonVocabulary("anion", [f"A{i:0{width_a}d}" for i in range(num_anions)]),
    )


def _popularity(rng, n, exponent):
    w = (np.arange(n) + 1.0) ** -exponent
    return rng.permutation(w)


def experimental_ils(oracle: Oracle, plan: SamplingPlan, prop: str) -> np.ndarray:
    """IL pairs with measurements for ``prop``; biased toward popular ions."""
    rng = _rng(oracle.config.seed, _STREAM_EXP, PROPERTIES.index(prop))
    popularity_rng = _rng(oracle.config.seed, _STREAM_EXP, 99)
    wc = _popularity(popularity_rng, plan.num_cations, plan.popularity_exponent)
    wa = _popularity(popularity_rng, plan.num_anions, plan.popularity_exponent)
    prob = np.outer(wc, wa).ravel()
    flat = rng.choice(prob.size, size=plan.experimental_ils, replace=False, p=prob / prob.sum())
    return np.stack(np.divmod(np.sort(flat), plan.num_anions), axis=1)


def _noise(cfg, prop, rng, n):
    std = cfg.noise_std.get(prop, 0.0)
    return rng.normal(0.0, std, n) if std > 0 else np.zeros(n)


def emit_experimental(oracle: Oracle, plan: SamplingPlan, prop: str) -> Dataset:
    cfg = oracle.config
    pairs = experimental_ils(oracle, plan, prop)
    rng = _rng(cfg.seed, _STREAM_NOISE, 100 + PROPERTIES.index(prop))
    grid = np.asarray(plan.temperature_grid)
    cats, ans, temps, press = [], [], [], []
    lo, hi = plan.temperatures_per_il
    for c, a in pairs:
        if prop == "melting_point":
            ts = np.array([REFERENCE_T])
        else:
            ts = np.sort(rng.choice(grid, size=rng.integers(lo, hi + 1), replace=False))
        if prop == "density":
            ps = rng.choice(np.asarray(plan.density_pressures), size=len(ts))
        else:
            ps = np.full(len(ts), REFERENCE_P)
        cats.extend([c] * len(ts))
        ans.extend([a] * len(ts))
        temps.extend(ts)
        press.extend(ps)
    cats, ans = np.asarray(cats), np.asarray(ans)
    value = oracle.true_property(cats, ans, prop, np.asarray(temps), np.asarray(press))
    value = value + _noise(cfg, prop, rng, len(value))
    return Dataset(prop, cats, ans, temps, press, value)


def emit_pretrain(oracle: Oracle, pairs, prop: str) -> Dataset:
    """Simulated values at 298 K / 1 bar with affine bias, noise and outliers."""
    cfg = oracle.config
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    cats, ans = pairs[:, 0], pairs[:, 1]
    n = len(cats)
    value = oracle.true_property(cats, ans, prop, REFERENCE_T, REFERENCE_P)
    mult, add = cfg.simulation_bias.get(prop, (1.0, 0.0))
    rng = _rng(cfg.seed, _STREAM_NOISE, PROPERTIES.index(prop))
    value = mult * value + add + _noise(cfg, prop, rng, n)
    if prop == "ln_viscosity" and cfg.outlier_fraction > 0:
        orng = _rng(cfg.seed, _STREAM_OUTLIERS)
        hit = orng.random(n) < cfg.outlier_fraction
        lift = orng.random(n)
        value = np.where(hit, 20.0 + lift * (cfg.outlier_magnitude - 20.0), value)
    return Dataset(prop, cats, ans, np.full(n, REFERENCE_T), np.full(n, REFERENCE_P), value)


def emit_datasets(config: OracleConfig, plan: SamplingPlan, pretrain_properties=PRETRAIN_PROPERTIES):
    """Pre-training sets (disjoint from every experimental IL) and sparse experimental sets."""
    oracle = Oracle(config, plan.num_cations, plan.num_anions)
    cations, anions = ion_vocabularies(plan.num_cations, plan.num_anions)
    experimental = {p: emit_experimental(oracle, plan, p) for p in PROPERTIES}
    forbidden = set()
    for ds in experimental.values():
        forbidden |= ds.unique_ils()
    pairs = sample_pairs(plan.num_cations, plan.num_anions, plan.anions_per_cation, _pair_seed(config.seed))
    pairs = exclude_ils(pairs, forbidden)
    pretrain = {p: emit_pretrain(oracle, pairs, p) for p in pretrain_properties}
    return SyntheticData(oracle, cations, anions, pretrain, experimental, pairs)


def _pair_seed(seed):
    return int(_rng(seed, _STREAM_PAIRS).integers(2**63))
