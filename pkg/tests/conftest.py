import numpy as np
import pytest

from hierfed.models import DatasetShard, ModelSpec


@pytest.fixture
def spec2x2():
    return ModelSpec("softmax-linear", 2, 2)


@pytest.fixture
def spec2x3():
    return ModelSpec("softmax-linear", 2, 3)


@pytest.fixture
def blob_shard():
    """Two overlapping gaussian blobs, 2 features, 2 classes, 40 examples."""
    rng = np.random.default_rng(42)
    n = 20
    x0 = rng.normal(loc=(-1.0, 0.0), scale=1.0, size=(n, 2))
    x1 = rng.normal(loc=(1.0, 0.0), scale=1.0, size=(n, 2))
    feats = np.vstack([x0, x1])
    labels = np.array([0] * n + [1] * n)
    return DatasetShard(feats, labels, owner=0)


def random_shard(rng, num_features, num_classes, n=12):
    return DatasetShard(
        rng.normal(size=(n, num_features)),
        rng.integers(0, num_classes, size=n),
        owner=0,
    )
