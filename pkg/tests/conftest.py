import numpy as np
import pytest

from stremn.tensor import precision


@pytest.fixture
def f64():
    with precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
