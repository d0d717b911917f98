import numpy as np
import pytest

from ternkit import recipes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def split():
    return recipes.bundled_split()


@pytest.fixture(scope="session")
def pretrained(split):
    """Full-precision TinyLM trained on the bundled corpus (a few seconds)."""
    return recipes.pretrain_full(split)
