"""Pre-training recommender: ion embeddings, residual branches, regression head."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .data import PROPERTIES, Scaler
from .nn import (
    ConfigurationError,
    Dense,
    Dropout,
    Embedding,
    Layer,
    ReLU,
    Sequential,
    check_ids,
    concat_cols,
    residual_add,
    set_training,
    split_cols,
)

EMBEDDING_DIM = 100
BRANCH_WIDTHS = (100, 200, 300)
BLOCK_COUNTS = (1, 2)
PRETRAIN_HEAD_WIDTHS = (50, 100, 200, 400)


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys]))


@dataclass(frozen=True)
class PretrainConfig:
    property: str = "density"
    branch_width: int = 100
    blocks_per_branch: int = 1
    head_width: int = 100
    dropout_rate: float = 0.05
    learning_rate: float = 0.001
    embedding_dim: int = EMBEDDING_DIM

    def __post_init__(self):
        if self.embedding_dim != EMBEDDING_DIM:
            raise ConfigurationError(f"embedding_dim is fixed at {EMBEDDING_DIM}")
        if self.property not in PROPERTIES:
            raise ConfigurationError(f"unknown property {self.property!r}")
        if self.head_width <= 0 or self.head_width % 2:
            raise ConfigurationError("head_width must be a positive even number")
        if self.branch_width <= 0 or self.blocks_per_branch < 0:
            raise ConfigurationError("branch_width must be positive and blocks_per_branch non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")


class Branch(Layer):
    """Projection to ``width`` followed by residual dense blocks."""

    def __init__(self, in_dim, width, blocks, dropout_rate, rng=None, dropout_seed=0):
        self.proj = Sequential([Dense(in_dim, width, rng), ReLU(), Dropout(dropout_rate, dropout_seed)])
        self.blocks = [
            Sequential([Dense(width, width, rng), ReLU(), Dropout(dropout_rate, dropout_seed + 1 + i)])
            for i in range(blocks)
        ]

    @property
    def width(self):
        return self.proj.layers[0].out_features

    def all_layers(self):
        return [self.proj, *self.blocks]

    def parameters(self):
        out = {f"proj.{k}": p for k, p in self.proj.parameters().items()}
        for i, block in enumerate(self.blocks):
            out.update({f"block{i}.{k}": p for k, p in block.parameters().items()})
        return out

    def forward(self, x):
        h = self.proj.forward(x)
        for block in self.blocks:
            h = residual_add(block.forward(h), h)
        return h

    def backward(self, grad):
        for block in reversed(self.blocks):
            grad = block.backward(grad) + grad
        return self.proj.backward(grad)


def make_head(in_dim, width, dropout_rate, rng=None, dropout_seed=0) -> Sequential:
    """dense(width)+ReLU+dropout, dense(width/2)+ReLU+dropout, linear output."""
    return Sequential(
        [
            Dense(in_dim, width, rng),
            ReLU(),
            Dropout(dropout_rate, dropout_seed),
            Dense(width, width // 2, rng),
            ReLU(),
            Dropout(dropout_rate, dropout_seed + 1),
            Dense(width // 2, 1, rng),
        ]
    )


class PretrainModel:
    def __init__(self, config: PretrainConfig, vocab_sizes, seed: int | None = 0):
        n_cat, n_an = vocab_sizes
        if n_cat <= 0 or n_an <= 0:
            raise ConfigurationError("vocabulary sizes must be positive")
        self.config = config
        self.seed = seed
        rng = None if seed is None else rng_for(seed, 1)
        dseed = 0 if seed is None else int(rng_for(seed, 2).integers(2**31))
        d, w = config.embedding_dim, config.branch_width
        self.cation_table = Embedding(n_cat, d, rng)
        self.anion_table = Embedding(n_an, d, rng)
        self.cation_branch = Branch(d, w, config.blocks_per_branch, config.dropout_rate, rng, dseed)
        self.anion_branch = Branch(d, w, config.blocks_per_branch, config.dropout_rate, rng, dseed + 100)
        self.head = make_head(2 * w, config.head_width, config.dropout_rate, rng, dseed + 200)
        self.concat_output = None
        self.target_scaler = Scaler(0.0, 1.0)

    @property
    def vocab_sizes(self):
        return self.cation_table.num_rows, self.anion_table.num_rows

    def parameters(self) -> dict:
        out = {"cation_table": self.cation_table.table, "anion_table": self.anion_table.table}
        out.update({f"cation_branch.{k}": p for k, p in self.cation_branch.parameters().items()})
        out.update({f"anion_branch.{k}": p for k, p in self.anion_branch.parameters().items()})
        out.update({f"head.{k}": p for k, p in self.head.parameters().items()})
        return out

    def set_training(self, training: bool):
        set_training(self.cation_branch.all_layers() + self.anion_branch.all_layers() + [self.head], training)

    def forward(self, cation_ids, anion_ids, training: bool = False) -> np.ndarray:
        cation_ids = np.asarray(cation_ids)
        anion_ids = np.asarray(anion_ids)
        if cation_ids.shape != anion_ids.shape:
            raise ValueError("cation and anion id arrays differ in length")
        self.set_training(training)
        hc = self.cation_branch.forward(self.cation_table.forward(cation_ids))
        ha = self.anion_branch.forward(self.anion_table.forward(anion_ids))
        self.concat_output = concat_cols([hc, ha])
        return self.head.forward(self.concat_output)

    def backward(self, grad):
        w = self.config.branch_width
        g = self.head.backward(grad)
        gc, ga = split_cols(g, (w, w))
        self.cation_table.backward(self.cation_branch.backward(gc))
        self.anion_table.backward(self.anion_branch.backward(ga))

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def predict(self, cation_ids, anion_ids, temperature=None, pressure=None) -> np.ndarray:
        """Unscaled predictions at the fixed pre-training conditions; conditions are ignored."""
        scaled = self.forward(cation_ids, anion_ids, training=False)
        return self.target_scaler.inverse_transform(scaled[:, 0])


def build_pretrain(config: PretrainConfig, vocab_sizes, seed: int = 0) -> PretrainModel:
    return PretrainModel(config, vocab_sizes, seed)


def forward(model: PretrainModel, cation_ids, anion_ids, mode: str = "infer") -> np.ndarray:
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    return model.forward(cation_ids, anion_ids, training=mode == "train")


def parameter_count(config: PretrainConfig, vocab_sizes) -> int:
    """Closed-form parameter census for a pre-training model."""
    d, w, h = config.embedding_dim, config.branch_width, config.head_width
    n_cat, n_an = vocab_sizes
    branch = (d * w + w) + config.blocks_per_branch * (w * w + w)
    head = (2 * w * h + h) + (h * (h // 2) + h // 2) + (h // 2 + 1)
    return (n_cat + n_an) * d + 2 * branch + head


class EncoderSnapshot:
    """Frozen copy of the tables and branches, up to the concatenation.

    Encodings are gathered from per-ion branch outputs computed once over the
    whole vocabulary, so a pair's encoding never depends on what else is in
    the batch.
    """

    def __init__(self, cation_table, anion_table, cation_branch, anion_branch, config, source_property):
        self.cation_table = cation_table
        self.anion_table = anion_table
        self.cation_branch = cation_branch
        self.anion_branch = anion_branch
        self.config = config
        self.source_property = source_property
        for p in self.parameters().values():
            p.freeze()
        set_training(cation_branch.all_layers() + anion_branch.all_layers(), False)
        self._cation_features = None
        self._anion_features = None

    @property
    def branch_width(self):
        return self.config.branch_width

    @property
    def width(self):
        return 2 * self.config.branch_width

    @property
    def vocab_sizes(self):
        return self.cation_table.num_rows, self.anion_table.num_rows

    def parameters(self) -> dict:
        out = {"cation_table": self.cation_table.table, "anion_table": self.anion_table.table}
        out.update({f"cation_branch.{k}": p for k, p in self.cation_branch.parameters().items()})
        out.update({f"anion_branch.{k}": p for k, p in self.anion_branch.parameters().items()})
        return out

    def ion_features(self):
        if self._cation_features is None:
            c = self.cation_branch.forward(self.cation_table.table.value)
            a = self.anion_branch.forward(self.anion_table.table.value)
            c.flags.writeable = False
            a.flags.writeable = False
            self._cation_features, self._anion_features = c, a
        return self._cation_features, self._anion_features

    def encode(self, cation_ids, anion_ids) -> np.ndarray:
        n_cat, n_an = self.vocab_sizes
        cation_ids = check_ids(cation_ids, n_cat)
        anion_ids = check_ids(anion_ids, n_an)
        if cation_ids.shape != anion_ids.shape:
            raise ValueError("cation and anion id arrays differ in length")
        c, a = self.ion_features()
        return concat_cols([c[cation_ids], a[anion_ids]])


def export_encoder(model: PretrainModel) -> EncoderSnapshot:
    return EncoderSnapshot(
        copy.deepcopy(model.cation_table),
        copy.deepcopy(model.anion_table),
        copy.deepcopy(model.cation_branch),
        copy.deepcopy(model.anion_branch),
        model.config,
        model.config.property,
    )


def encode(snapshot: EncoderSnapshot, cation_ids, anion_ids) -> np.ndarray:
    return snapshot.encode(cation_ids, anion_ids)


def random_encoder(config: PretrainConfig, vocab_sizes, seed: int) -> EncoderSnapshot:
    """Untrained encoder with freshly initialised weights, frozen immediately."""
    snap = export_encoder(PretrainModel(config, vocab_sizes, seed))
    snap.source_property = None
    return snap
