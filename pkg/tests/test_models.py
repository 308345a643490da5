import math

import numpy as np
import pytest
from scipy.optimize import minimize

from hierfed.errors import ConfigurationError
from hierfed.models import (
    DatasetShard,
    ModelSpec,
    accuracy,
    init_params,
    loss,
    loss_gradient,
)
from conftest import random_shard


def test_init_deterministic(spec2x2):
    a = init_params(spec2x2, 7)
    b = init_params(spec2x2, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_params(spec2x2, 8))


def test_dimensions(spec2x3):
    assert spec2x3.dim == (2 + 1) * 3
    assert ModelSpec("one-hidden-layer", 3, 4, hidden=5).dim == 3 * 5 + 5 + 5 * 4 + 4


def test_init_zero_mean(spec2x2):
    entries = np.concatenate([init_params(spec2x2, s) for s in range(1000)])
    assert abs(entries.mean()) < 0.05


def test_bad_spec():
    with pytest.raises(ConfigurationError):
        ModelSpec("mlp", 2, 2)
    with pytest.raises(ConfigurationError):
        ModelSpec("one-hidden-layer", 2, 2, hidden=0)


def test_loss_uniform_at_zero(spec2x2, blob_shard):
    assert loss(spec2x2, np.zeros(spec2x2.dim), blob_shard) == pytest.approx(math.log(2))


def test_loss_perfect_fit_limit(spec2x2):
    shard = DatasetShard([[-1.0, 0.0], [1.0, 0.0]], [0, 1])
    w = np.zeros(spec2x2.dim)
    w[0], w[1] = -50.0, 50.0  # huge margin on feature 0
    assert loss(spec2x2, w, shard) < 1e-12


def test_loss_matches_naive_recomputation(spec2x3):
    # independent oracle: per-example softmax cross-entropy in plain python
    feats = [[0.5, -1.0], [2.0, 0.3], [-0.7, 0.9], [0.0, 1.5]]
    labels = [0, 2, 1, 2]
    shard = DatasetShard(feats, labels)
    w = init_params(spec2x3, 3)
    W = [[w[r * 3 + c] for c in range(3)] for r in range(2)]
    b = [w[6 + c] for c in range(3)]
    total = 0.0
    for x, y in zip(feats, labels):
        logits = [x[0] * W[0][c] + x[1] * W[1][c] + b[c] for c in range(3)]
        z = sum(math.exp(v) for v in logits)
        total += -math.log(math.exp(logits[y]) / z)
    assert loss(spec2x3, w, shard) == pytest.approx(total / 4, rel=1e-12)


def test_gradient_zero_at_minimizer(spec2x2, blob_shard):
    res = minimize(
        lambda w: loss(spec2x2, w, blob_shard),
        np.zeros(spec2x2.dim),
        jac=lambda w: loss_gradient(spec2x2, w, blob_shard),
        method="BFGS",
        options={"gtol": 1e-10},
    )
    assert np.linalg.norm(loss_gradient(spec2x2, res.x, blob_shard)) < 1e-8


def test_gradient_two_class_antisymmetry(spec2x2, blob_shard):
    g = loss_gradient(spec2x2, np.zeros(spec2x2.dim), blob_shard)
    W = g[:4].reshape(2, 2)
    b = g[4:]
    assert np.allclose(W[:, 0], -W[:, 1])
    assert np.allclose(b[0], -b[1])


@pytest.mark.parametrize("kind,hidden", [("softmax-linear", 0), ("one-hidden-layer", 4)])
def test_gradient_matches_finite_differences(kind, hidden):
    rng = np.random.default_rng(0)
    spec = ModelSpec(kind, 3, 3, hidden=hidden)
    for _ in range(100):
        shard = random_shard(rng, 3, 3)
        w = rng.normal(size=spec.dim)
        g = loss_gradient(spec, w, shard)
        step = 1e-5
        fd = np.empty(spec.dim)
        for i in range(spec.dim):
            e = np.zeros(spec.dim)
            e[i] = step
            fd[i] = (loss(spec, w + e, shard) - loss(spec, w - e, shard)) / (2 * step)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1.0)


def test_accuracy_all_correct(spec2x2):
    shard = DatasetShard([[-3.0, 0.0], [3.0, 0.0]], [0, 1])
    w = np.zeros(spec2x2.dim)
    w[0], w[1] = -1.0, 1.0
    assert accuracy(spec2x2, w, shard) == 1.0


def test_accuracy_tie_breaks_to_lowest_class(spec2x3):
    shard = DatasetShard([[1.0, 2.0]] * 5, [0, 0, 1, 2, 2])
    assert accuracy(spec2x3, np.zeros(spec2x3.dim), shard) == pytest.approx(2 / 5)


def test_accuracy_matches_per_example_check(spec2x3):
    rng = np.random.default_rng(5)
    shard = random_shard(rng, 2, 3, n=30)
    w = init_params(spec2x3, 9)
    W = w[:6].reshape(2, 3)
    b = w[6:]
    hits = 0
    for x, y in zip(shard.features, shard.labels):
        scores = list(x @ W + b)
        if scores.index(max(scores)) == y:
            hits += 1
    assert accuracy(spec2x3, w, shard) == pytest.approx(hits / 30)


def test_loss_nonnegative_and_descends(spec2x2, blob_shard):
    w = init_params(spec2x2, 1)
    prev = loss(spec2x2, w, blob_shard)
    assert prev >= 0
    for _ in range(50):
        w = w - 0.05 * loss_gradient(spec2x2, w, blob_shard)
        cur = loss(spec2x2, w, blob_shard)
        assert 0 <= cur <= prev + 1e-12
        prev = cur


def test_argmax_invariant_under_positive_scaling(spec2x2):
    rng = np.random.default_rng(11)
    shard = random_shard(rng, 2, 2, n=25)
    w = rng.normal(size=spec2x2.dim)
    w[4:] = 0.0  # zero bias so scaling preserves the logit ordering
    base = accuracy(spec2x2, w, shard)
    for scale in (0.1, 3.0, 1000.0):
        assert accuracy(spec2x2, scale * w, shard) == base


def test_dimension_mismatch_raises(spec2x2, blob_shard):
    with pytest.raises(ConfigurationError):
        loss(spec2x2, np.zeros(spec2x2.dim + 1), blob_shard)
    with pytest.raises(ConfigurationError):
        loss_gradient(spec2x2, np.zeros(3), blob_shard)
