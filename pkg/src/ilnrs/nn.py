"""Small dense-network engine in float64 numpy.

Only the layer kinds the recommender needs are implemented: dense, ReLU,
inverted dropout, embedding lookup, residual addition and column
concatenation. Every layer caches what it needs in ``forward`` and
accumulates parameter gradients in ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class OutOfVocabularyError(IndexError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0
    frozen: bool = False

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        if self.value.ndim != 2:
            raise DimensionError(f"parameters are 2-D, got shape {self.value.shape}")
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def freeze(self):
        self.frozen = True
        self.value.flags.writeable = False


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigurationError("betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")


def adam_step(param: Parameter, cfg: AdamConfig) -> None:
    """Bias-corrected Adam update; frozen parameters are skipped."""
    if param.frozen:
        return
    g = param.grad
    param.step_count += 1
    t = param.step_count
    param.adam_m *= cfg.beta1
    param.adam_m += (1.0 - cfg.beta1) * g
    param.adam_v *= cfg.beta2
    param.adam_v += (1.0 - cfg.beta2) * g * g
    m_hat = param.adam_m / (1.0 - cfg.beta1**t)
    v_hat = param.adam_v / (1.0 - cfg.beta2**t)
    param.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    param.zero_grad()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Layer:
    training = False

    def parameters(self) -> dict[str, Parameter]:
        return {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        if rng is None:
            w = np.zeros((in_features, out_features))
        else:
            w = glorot_uniform(rng, in_features, out_features)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros((1, out_features)))
        self._input = None

    @property
    def in_features(self):
        return self.weight.shape[0]

    @property
    def out_features(self):
        return self.weight.shape[1]

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        self._input = x
        return dense_forward(x, self.weight, self.bias)

    def backward(self, grad):
        x = self._input
        self.weight.grad += x.T @ grad
        self.bias.grad += grad.sum(axis=0, keepdims=True)
        return grad @ self.weight.value.T


def dense_forward(x: np.ndarray, weight: Parameter, bias: Parameter) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != weight.shape[0] or bias.shape != (1, weight.shape[1]):
        raise DimensionError(
            f"cannot apply weight {weight.shape} / bias {bias.shape} to input {np.shape(x)}"
        )
    return x @ weight.value + bias.value


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


class Dropout(Layer):
    """Inverted dropout. Identity unless ``training`` is set."""

    def __init__(self, rate: float, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self.training = False
        self._mask = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Embedding(Layer):
    def __init__(self, num_rows: int, dim: int, rng: np.random.Generator | None = None, scale: float = 0.05):
        if rng is None:
            table = np.zeros((num_rows, dim))
        else:
            table = rng.uniform(-scale, scale, size=(num_rows, dim))
        self.table = Parameter(table)
        self._ids = None

    @property
    def num_rows(self):
        return self.table.shape[0]

    def parameters(self):
        return {"table": self.table}

    def forward(self, ids):
        ids = check_ids(ids, self.num_rows)
        self._ids = ids
        return self.table.value[ids]

    def backward(self, grad):
        np.add.at(self.table.grad, self._ids, grad)
        return None


def check_ids(ids, size: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise DimensionError("ids must be a 1-D index array")
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        bad = ids[(ids < 0) | (ids >= size)][0]
        raise OutOfVocabularyError(f"id {int(bad)} outside vocabulary of size {size}")
    return ids.astype(np.int64, copy=False)


def residual_add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if np.shape(x) != np.shape(y):
        raise DimensionError(f"residual shapes differ: {np.shape(x)} vs {np.shape(y)}")
    return x + y


def concat_cols(parts) -> np.ndarray:
    parts = [np.asarray(p, dtype=DTYPE) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"row counts differ: {sorted(rows)}")
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts, axis=1)


def split_cols(grad: np.ndarray, widths) -> list[np.ndarray]:
    """Backward of ``concat_cols``: slice the upstream grad by column ranges."""
    edges = np.cumsum([0, *widths])
    if edges[-1] != grad.shape[1]:
        raise DimensionError("widths do not sum to the gradient width")
    return [grad[:, lo:hi] for lo, hi in zip(edges[:-1], edges[1:])]


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    n = pred.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    resid = pred - target
    return float(np.mean(resid * resid)), 2.0 * resid / n


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"{i}.{name}"] = p
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def set_training(layers, training: bool) -> None:
    for layer in layers:
        if isinstance(layer, Dropout):
            layer.training = training
        elif isinstance(layer, Sequential):
            set_training(layer.layers, training)


def gradient_check(loss_fn, params, h: float = 1e-5, max_checks: int = 200, seed: int = 0) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must zero the gradients, run forward and backward, and return
    the scalar loss. ``params`` maps names to :class:`Parameter`. Up to
    ``max_checks`` entries are sampled uniformly over all parameters.
    Returns the largest relative error, with denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    params = list(params.values()) if isinstance(params, dict) else list(params)
    loss_fn()
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.value.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(max_checks, total), replace=False)
    offsets = np.cumsum(sizes)

    worst = 0.0
    for k in flat:
        pi = int(np.searchsorted(offsets, k, side="right"))
        local = int(k - (offsets[pi - 1] if pi else 0))
        p = params[pi]
        idx = np.unravel_index(local, p.shape)
        writeable = p.value.flags.writeable
        p.value.flags.writeable = True
        orig = p.value[idx]
        p.value[idx] = orig + h
        f_plus = loss_fn()
        p.value[idx] = orig - h
        f_minus = loss_fn()
        p.value[idx] = orig
        p.value.flags.writeable = writeable
        num = (f_plus - f_minus) / (2.0 * h)
        a = analytic[pi][idx]
        err = abs(a - num) / max(abs(a), abs(num), 1e-8)
        worst = max(worst, err)
    loss_fn()
    return worst
