import numpy as np
import pytest

from lossforge.data import gaussian_blobs, synthetic_shapes
from lossforge.genome import Y, GenomeBuilder
from lossforge.losses import builtin


@pytest.fixture
def ce_genome():
    return builtin('CE').genome


@pytest.fixture
def blobs():
    return gaussian_blobs(600, 3, 2, 6.0, seed=0)


@pytest.fixture
def tiny_blobs():
    return gaussian_blobs(120, 3, 2, 6.0, seed=0)


@pytest.fixture
def tiny_shapes():
    return synthetic_shapes(48, 4, 8, seed=0, val_size=12)


@pytest.fixture
def constant_genome():
    """sub(y, y): zero everywhere, no dependence on yhat."""
    b = GenomeBuilder()
    return b.build(b.add('sub', Y, Y), sign=1)


@pytest.fixture
def image_batch():
    rng = np.random.default_rng(0)
    images = rng.random((6, 8, 8, 3)).astype(np.float32)
    labels = np.eye(3)[rng.integers(0, 3, size=6)]
    return images, labels
