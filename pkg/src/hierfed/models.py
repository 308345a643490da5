"""Supervised models trained by the agents.

Default model is multinomial logistic regression ("softmax-linear"); a
one-hidden-layer tanh perceptron is available behind the model config.
All parameters live in a single flat float64 vector so Euclidean
distances between models are well-defined everywhere in the codebase.

Flattening order (fixed):
  softmax-linear:   W (F x C, row-major), then b (C,)
  one-hidden-layer: W1 (F x H, row-major), b1 (H,), W2 (H x C, row-major), b2 (C,)
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

SOFTMAX_LINEAR = "softmax-linear"
ONE_HIDDEN = "one-hidden-layer"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    num_features: int
    num_classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in (SOFTMAX_LINEAR, ONE_HIDDEN):
            raise ConfigurationError(f"unknown model kind: {self.kind!r}")
        if self.num_features < 1 or self.num_classes < 2:
            raise ConfigurationError("model needs num_features >= 1 and num_classes >= 2")
        if self.kind == ONE_HIDDEN and self.hidden < 1:
            raise ConfigurationError("one-hidden-layer model needs hidden >= 1")

    @property
    def dim(self):
        if self.kind == SOFTMAX_LINEAR:
            return (self.num_features + 1) * self.num_classes
        f, h, c = self.num_features, self.hidden, self.num_classes
        return f * h + h + h * c + c


@dataclass
class DatasetShard:
    """One agent's labelled examples: features (n, F) and integer labels (n,)."""

    features: np.ndarray
    labels: np.ndarray
    owner: int = -1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ConfigurationError("shard needs 2-D features and 1-D labels")
        if len(self.features) != len(self.labels):
            raise ConfigurationError("feature/label count mismatch")
        if not np.all(np.isfinite(self.features)):
            raise ConfigurationError("non-finite feature values")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return DatasetShard(self.features[idx], self.labels[idx], self.owner)


def check_params(spec, w):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.dim,):
        raise ConfigurationError(
            f"parameter vector has shape {w.shape}, model expects ({spec.dim},)"
        )
    return w


def check_shard(spec, shard):
    if shard.features.shape[1] != spec.num_features:
        raise ConfigurationError(
            f"shard has {shard.features.shape[1]} features, model expects {spec.num_features}"
        )
    if len(shard) == 0:
        raise ConfigurationError("empty shard")
    if shard.labels.min() < 0 or shard.labels.max() >= spec.num_classes:
        raise ConfigurationError("label outside [0, num_classes)")


def init_params(spec, seed):
    """Zero-mean gaussian init with scale 1/sqrt(F); bit-deterministic in (spec, seed)."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(spec.num_features), size=spec.dim)


def _unpack(spec, w):
    f, c = spec.num_features, spec.num_classes
    if spec.kind == SOFTMAX_LINEAR:
        W = w[: f * c].reshape(f, c)
        b = w[f * c :]
        return W, b
    h = spec.hidden
    i = 0
    W1 = w[i : i + f * h].reshape(f, h); i += f * h
    b1 = w[i : i + h]; i += h
    W2 = w[i : i + h * c].reshape(h, c); i += h * c
    b2 = w[i:]
    return W1, b1, W2, b2


def _logits(spec, w, X):
    if spec.kind == SOFTMAX_LINEAR:
        W, b = _unpack(spec, w)
        return X @ W + b
    W1, b1, W2, b2 = _unpack(spec, w)
    return np.tanh(X @ W1 + b1) @ W2 + b2


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss(spec, w, shard):
    """Mean cross-entropy of the model on the shard."""
    w = check_params(spec, w)
    check_shard(spec, shard)
    logp = _log_softmax(_logits(spec, w, shard.features))
    return float(-logp[np.arange(len(shard)), shard.labels].mean())


def loss_gradient(spec, w, shard):
    """Exact analytic gradient of `loss` w.r.t. the flat parameter vector."""
    w = check_params(spec, w)
    check_shard(spec, shard)
    X, y, n = shard.features, shard.labels, len(shard)
    logits = _logits(spec, w, X)
    p = np.exp(_log_softmax(logits))
    p[np.arange(n), y] -= 1.0
    p /= n  # dL/dlogits
    if spec.kind == SOFTMAX_LINEAR:
        dW = X.T @ p
        db = p.sum(axis=0)
        return np.concatenate([dW.ravel(), db])
    W1, b1, W2, b2 = _unpack(spec, w)
    a = np.tanh(X @ W1 + b1)
    dW2 = a.T @ p
    db2 = p.sum(axis=0)
    da = p @ W2.T
    dz = da * (1.0 - a * a)
    dW1 = X.T @ dz
    db1 = dz.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])


def accuracy(spec, w, shard):
    """Fraction of correct argmax predictions; ties go to the lowest class id."""
    w = check_params(spec, w)
    check_shard(spec, shard)
    pred = np.argmax(_logits(spec, w, shard.features), axis=1)
    return float((pred == shard.labels).mean())
