"""Dense feed-forward networks trained with plain mini-batch SGD.

Parameters are immutable value objects: every training or slicing function
returns new arrays and never writes into its inputs. Hidden layers use ReLU
and the output layer a softmax, with loss measured as sparse categorical
cross-entropy.

A :class:`ParamSet` may be a full model or a *fragment*: a subset of the
layers of a model, tagged with the positions they occupy. Fragments are what
travels between server and clients when only part of a model is shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .errors import InvalidArgumentError

_PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class LayerParams:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise InvalidArgumentError(
                f"layer shapes incompatible: weights {w.shape}, biases {b.shape}"
            )
        if min(w.shape) < 1:
            raise InvalidArgumentError(f"layer dimensions must be >= 1, got {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return self.weights.size + self.biases.size

    def __eq__(self, other):
        if not isinstance(other, LayerParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(
            self.biases, other.biases
        )


@dataclass(frozen=True, eq=False)
class ParamSet:
    """An ordered collection of dense layers.

    ``indices`` records the position of each layer inside the model it was
    cut from. A full model has ``indices == (0, 1, ..., n - 1)``.
    """

    layers: tuple[LayerParams, ...]
    indices: tuple[int, ...] = field(default=None)

    def __post_init__(self):
        layers = tuple(self.layers)
        indices = tuple(range(len(layers))) if self.indices is None else tuple(self.indices)
        if len(indices) != len(layers):
            raise InvalidArgumentError("one index per layer is required")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise InvalidArgumentError(f"layer indices must be strictly increasing: {indices}")
        if indices and indices[0] < 0:
            raise InvalidArgumentError("layer indices must be non-negative")
        for (ia, a), (ib, b) in zip(zip(indices, layers), zip(indices[1:], layers[1:])):
            if ib == ia + 1 and a.out_dim != b.in_dim:
                raise InvalidArgumentError(
                    f"layer {ia} out_dim {a.out_dim} != layer {ib} in_dim {b.in_dim}"
                )
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "indices", indices)

    def __len__(self):
        return len(self.layers)

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.indices == other.indices and all(
            a == b for a, b in zip(self.layers, other.layers)
        )

    @property
    def is_full(self) -> bool:
        return self.indices == tuple(range(len(self.layers)))

    @property
    def param_count(self) -> int:
        return sum(layer.size for layer in self.layers)

    @property
    def activations(self) -> tuple[str, ...]:
        if not self.is_full:
            raise InvalidArgumentError("activations are defined for full models only")
        n = len(self.layers)
        return tuple("softmax" if i == n - 1 else "relu" for i in range(n))

    @property
    def layer_dims(self) -> list[int]:
        if not self.layers:
            return []
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def to_vector(self) -> np.ndarray:
        """Flatten all weights and biases, layer by layer, weights first."""
        if not self.layers:
            return np.zeros(0)
        return np.concatenate(
            [np.concatenate([l.weights.ravel(), l.biases]) for l in self.layers]
        )

    def from_vector(self, vec) -> "ParamSet":
        """Inverse of :meth:`to_vector` using this set's shapes."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.param_count,):
            raise InvalidArgumentError(
                f"expected vector of length {self.param_count}, got {vec.shape}"
            )
        layers, pos = [], 0
        for layer in self.layers:
            nw = layer.weights.size
            w = vec[pos : pos + nw].reshape(layer.weights.shape)
            pos += nw
            b = vec[pos : pos + layer.out_dim]
            pos += layer.out_dim
            layers.append(LayerParams(w.copy(), b.copy()))
        return ParamSet(tuple(layers), self.indices)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be an integer >= 1, got {self.epochs}")
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise InvalidArgumentError(
                f"learning_rate must be finite and >= 0, got {self.learning_rate}"
            )
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidArgumentError(
                f"batch_size must be an integer >= 1, got {self.batch_size}"
            )
        if self.seed < 0:
            raise InvalidArgumentError("seed must be non-negative")


def init_params(layer_dims, seed: int) -> ParamSet:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise InvalidArgumentError(f"need at least 2 layer dims, got {dims}")
    if any(int(d) != d or d < 1 for d in dims):
        raise InvalidArgumentError(f"layer dims must be positive integers, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(LayerParams(w, np.zeros(fan_out)))
    return ParamSet(tuple(layers))


def zeros_like(params: ParamSet) -> ParamSet:
    return ParamSet(
        tuple(LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in params.layers),
        params.indices,
    )


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_inputs(params: ParamSet, x) -> np.ndarray:
    if not params.is_full or not params.layers:
        raise InvalidArgumentError("forward needs a full, non-empty model")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layers[0].in_dim:
        raise InvalidArgumentError(
            f"inputs must have shape (batch, {params.layers[0].in_dim}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("inputs must be finite")
    return x


def forward(params: ParamSet, inputs) -> np.ndarray:
    """Class probabilities, one row per input row."""
    h = _check_inputs(params, inputs)
    last = len(params.layers) - 1
    for j, layer in enumerate(params.layers):
        z = h @ layer.weights.T + layer.biases
        h = _softmax(z) if j == last else np.maximum(z, 0.0)
    return h


def _check_labels(params: ParamSet, x, y):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise InvalidArgumentError("labels must be a vector with one entry per row")
    if y.shape[0] == 0:
        raise InvalidArgumentError("batch must be non-empty")
    num_classes = params.layers[-1].out_dim
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InvalidArgumentError("labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise InvalidArgumentError(f"labels must lie in [0, {num_classes})")
    return y


def _cross_entropy(probs, y) -> float:
    picked = probs[np.arange(y.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, _PROB_FLOOR))))


def _backprop(weights, biases, x, y):
    """Loss and per-layer (dW, db) on raw arrays; inputs assumed validated."""
    n = x.shape[0]
    last = len(weights) - 1
    acts, pre = [x], []
    h = x
    for j, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        pre.append(z)
        h = _softmax(z) if j == last else np.maximum(z, 0.0)
        acts.append(h)
    probs = acts[-1]
    loss = _cross_entropy(probs, y)
    # softmax + cross-entropy: dL/dz = (p - onehot) / n
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(weights)
    for j in range(last, -1, -1):
        grads[j] = (delta.T @ acts[j], delta.sum(axis=0))
        if j > 0:
            delta = (delta @ weights[j]) * (pre[j - 1] > 0)
    return loss, grads


def loss_and_grad(params: ParamSet, x, y) -> tuple[float, ParamSet]:
    """Mean cross-entropy over the batch and its gradient w.r.t. every parameter."""
    x = _check_inputs(params, x)
    y = _check_labels(params, x, y)
    loss, grads = _backprop([l.weights for l in params.layers],
                            [l.biases for l in params.layers], x, y)
    return loss, ParamSet(tuple(LayerParams(gw, gb) for gw, gb in grads), params.indices)


def _as_xy(data: Dataset):
    return np.asarray(data.features, dtype=np.float64), np.asarray(data.labels)


def sgd_fit(params: ParamSet, train: Dataset, cfg: TrainConfig) -> tuple[ParamSet, float]:
    """Run ``cfg.epochs`` epochs of mini-batch SGD.

    Each epoch visits the samples in a fresh permutation drawn from a generator
    keyed on ``(cfg.seed, epoch)``. Returns the updated parameters and the
    sample-weighted mean batch loss of the final epoch.
    """
    x, y = _as_xy(train)
    if x.shape[0] == 0:
        raise InvalidArgumentError("training set is empty")
    x = _check_inputs(params, x)
    y = _check_labels(params, x, y)
    n = x.shape[0]
    weights = [l.weights.copy() for l in params.layers]
    biases = [l.biases.copy() for l in params.layers]
    lr = cfg.learning_rate
    epoch_loss = 0.0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = _backprop(weights, biases, x[idx], y[idx])
            total += loss * idx.shape[0]
            if lr != 0:
                for j, (gw, gb) in enumerate(grads):
                    weights[j] = weights[j] - lr * gw
                    biases[j] = biases[j] - lr * gb
        epoch_loss = total / n
    out = ParamSet(tuple(LayerParams(w, b) for w, b in zip(weights, biases)), params.indices)
    return out, epoch_loss


def predict(params: ParamSet, inputs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties.
    return np.argmax(forward(params, inputs), axis=1)


def evaluate(params: ParamSet, test: Dataset) -> tuple[float, float]:
    """Return ``(accuracy, mean cross-entropy)`` on ``test``."""
    x, y = _as_xy(test)
    if x.shape[0] == 0:
        raise InvalidArgumentError("test set is empty")
    x = _check_inputs(params, x)
    y = _check_labels(params, x, y)
    probs = forward(params, x)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == y))
    return accuracy, _cross_entropy(probs, y)


def _spec_indices(spec, total: int) -> tuple[int, ...]:
    indices = tuple(spec.layer_indices)
    if spec.total_layers != total:
        raise InvalidArgumentError(
            f"share spec is for {spec.total_layers} layers, model has {total}"
        )
    if any(i < 0 or i >= total for i in indices):
        raise InvalidArgumentError(f"layer index out of range in {indices} for {total} layers")
    return indices


def complement_indices(spec) -> tuple[int, ...]:
    chosen = set(spec.layer_indices)
    return tuple(i for i in range(spec.total_layers) if i not in chosen)


def slice_layers(params: ParamSet, spec) -> ParamSet:
    """Cut out the layers listed in ``spec.layer_indices`` (order preserved)."""
    if not params.is_full:
        raise InvalidArgumentError("can only slice a full model")
    indices = _spec_indices(spec, len(params))
    return ParamSet(tuple(params.layers[i] for i in indices), indices)


def merge_layers(global_fragment: ParamSet, local_fragment: ParamSet, spec) -> ParamSet:
    """Recombine a shared fragment with the complementary local fragment."""
    total = spec.total_layers
    shared = _spec_indices(spec, total)
    if global_fragment.indices != shared:
        raise InvalidArgumentError(
            f"global fragment covers {global_fragment.indices}, spec says {shared}"
        )
    overlap = set(global_fragment.indices) & set(local_fragment.indices)
    if overlap:
        raise InvalidArgumentError(f"fragments overlap on layers {sorted(overlap)}")
    covered = set(global_fragment.indices) | set(local_fragment.indices)
    if covered != set(range(total)):
        missing = sorted(set(range(total)) - covered)
        raise InvalidArgumentError(f"fragments leave layers {missing} uncovered")
    by_index = dict(zip(global_fragment.indices, global_fragment.layers))
    by_index.update(zip(local_fragment.indices, local_fragment.layers))
    return ParamSet(tuple(by_index[i] for i in range(total)))


class DenseNetClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`sgd_fit` for centralized training.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(256, 256, 256)
        Widths of the ReLU hidden layers.
    learning_rate : float, default=0.05
    epochs : int, default=10
    batch_size : int, default=32
    random_state : int, default=0
        Seeds both weight initialization and per-epoch shuffling.
    """

    def __init__(
        self,
        hidden_layer_sizes=(256, 256, 256),
        learning_rate=0.05,
        epochs=10,
        batch_size=32,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        dims = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        cfg = TrainConfig(self.epochs, self.learning_rate, self.batch_size, self.random_state)
        params = init_params(dims, self.random_state)
        self.params_, self.loss_ = sgd_fit(params, Dataset(X, encoded, len(self.classes_)), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return forward(self.params_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
