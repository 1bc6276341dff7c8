"""Dense softmax classifier over a flat parameter vector.

All federation math runs on these primitives: cross-entropy loss, its
analytic gradient, a plain SGD step, and argmax accuracy. Everything is
pure, double precision, and deterministic, so gradients can be verified
against finite differences and runs replayed bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LayoutError

_ACTIVATIONS = ("identity", "relu")

INIT_SCALE = 0.05


@dataclass(frozen=True)
class ModelSpec:
    """Layer widths (input dim, hidden dims..., class count) and the hidden activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigError("layer_sizes needs at least input and output entries")
        if any(s <= 0 for s in self.layer_sizes):
            raise ConfigError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def param_count(self) -> int:
        return sum((d_in + 1) * d_out for d_in, d_out in self.shapes())

    def shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_spans(self) -> list[tuple[slice, slice]]:
        """Per layer, the (weight, bias) slices into the flat vector."""
        spans = []
        offset = 0
        for d_in, d_out in self.shapes():
            w = slice(offset, offset + d_in * d_out)
            offset += d_in * d_out
            b = slice(offset, offset + d_out)
            offset += d_out
            spans.append((w, b))
        return spans


@dataclass
class Batch:
    """A dense mini-batch: one feature row per example, integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise LayoutError("features must be a 2-d array (rows = examples)")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise LayoutError("labels must be 1-d and match the feature row count")
        if self.features.shape[0] < 1:
            raise LayoutError("batch must contain at least one example")
        if self.labels.min() < 0:
            raise LayoutError("labels must be nonnegative class indices")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class ParamVector:
    """Flat float64 model parameters tied to a ModelSpec layout."""

    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=np.float64).ravel()
        if self.values.size != self.spec.param_count:
            raise LayoutError(
                f"parameter vector has {self.values.size} entries, "
                f"layout needs {self.spec.param_count}"
            )
        if not np.all(np.isfinite(self.values)):
            raise LayoutError("parameter vector contains non-finite values")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.spec)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Reshaped (W, b) views per layer; views share memory with values."""
        out = []
        for (w_sl, b_sl), (d_in, d_out) in zip(self.spec.layer_spans(), self.spec.shapes()):
            out.append((self.values[w_sl].reshape(d_in, d_out), self.values[b_sl]))
        return out


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Fresh parameters, uniform in [-INIT_SCALE, INIT_SCALE]."""
    return ParamVector(rng.uniform(-INIT_SCALE, INIT_SCALE, spec.param_count), spec)


def _check_batch(params: ParamVector, batch: Batch) -> None:
    if batch.features.shape[1] != params.spec.input_dim:
        raise LayoutError(
            f"batch has {batch.features.shape[1]} features, model expects {params.spec.input_dim}"
        )
    if int(batch.labels.max()) >= params.spec.class_count:
        raise LayoutError(
            f"label {int(batch.labels.max())} out of range for {params.spec.class_count} classes"
        )


def _check_same_layout(a: ParamVector, b: ParamVector) -> None:
    if a.spec != b.spec:
        raise LayoutError("parameter vectors use different layouts")


def _forward(params: ParamVector, features: np.ndarray, keep: bool = False):
    """Logits for a feature matrix; with keep=True also the per-layer caches."""
    spec = params.spec
    relu = spec.activation == "relu"
    inputs = []  # input to each layer
    pre = []  # pre-activation of each hidden layer
    h = features
    layers = params.layers()
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        z = h @ w + b
        if i < len(layers) - 1:
            if keep:
                pre.append(z)
            h = np.maximum(z, 0.0) if relu else z
        else:
            h = z
    if keep:
        return h, inputs, pre
    return h


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(params: ParamVector, batch: Batch) -> float:
    """Mean softmax cross-entropy of the batch."""
    _check_batch(params, batch)
    logp = _log_softmax(_forward(params, batch.features))
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def grad(params: ParamVector, batch: Batch) -> ParamVector:
    """Analytic gradient of loss() with the same layout as params."""
    _check_batch(params, batch)
    spec = params.spec
    n = len(batch)
    logits, inputs, pre = _forward(params, batch.features, keep=True)

    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    out = np.empty(spec.param_count)
    spans = spec.layer_spans()
    layers = params.layers()
    for i in range(spec.n_layers - 1, -1, -1):
        w_sl, b_sl = spans[i]
        out[w_sl] = (inputs[i].T @ delta).ravel()
        out[b_sl] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ layers[i][0].T
            if spec.activation == "relu":
                delta = delta * (pre[i - 1] > 0.0)
    return ParamVector(out, spec)


def sgd_step(params: ParamVector, g: ParamVector, eta: float) -> ParamVector:
    """Elementwise params - eta * g."""
    _check_same_layout(params, g)
    return ParamVector(params.values - eta * g.values, params.spec)


def accuracy(params: ParamVector, batch: Batch) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    _check_batch(params, batch)
    preds = np.argmax(_forward(params, batch.features), axis=1)
    return float((preds == batch.labels).mean())


def train_private(
    train: Batch,
    test: Batch,
    spec: ModelSpec,
    epochs: int,
    eta: float,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[ParamVector, float]:
    """Stand-alone mini-batch SGD on one client's data, before any federation.

    Returns the trained parameters and their accuracy on the client's full
    test set (the private-model score the run-time gain estimates compare
    against).
    """
    if epochs < 1:
        raise ConfigError("private training budget must be at least 1 epoch")
    if batch_size < 1:
        raise ConfigError("batch size must be positive")
    n = len(train)
    if n == 0:
        raise ConfigError("cannot train a private model on an empty dataset")
    params = init_params(spec, rng)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            b = Batch(train.features[rows], train.labels[rows])
            params = sgd_step(params, grad(params, b), eta)
    return params, accuracy(params, test)
