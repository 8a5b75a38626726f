import numpy as np
import pytest

from ivos.embedding import EmbeddingField


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(rng, h, w, dim=8, stride=4, frame_index=0, scale=1.0):
    """Random embedding field with norms small enough to avoid squash saturation."""
    grid = rng.uniform(0.0, scale, size=(h, w, dim)).astype(np.float32)
    return EmbeddingField(grid, stride=stride, frame_index=frame_index)


@pytest.fixture
def make_field(rng):
    def factory(h, w, dim=8, stride=4, frame_index=0, scale=1.0):
        return random_field(rng, h, w, dim, stride, frame_index, scale)
    return factory
