import numpy as np
import pytest
from hypothesis import settings

from thermosurrogate.dataset import InitialConditions

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def conditions():
    return InitialConditions(293.15, 291.15, 293.65, (1000.0, 500.0), 8.0)
