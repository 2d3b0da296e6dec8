import numpy as np
import pytest

from fvsde import GridSpec, GridVector


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def zero_mean_rows(rng, n, count):
    rows = rng.standard_normal((count, n))
    return rows - rows.mean(axis=1, keepdims=True)


@pytest.fixture
def spec32():
    return GridSpec(32)


@pytest.fixture
def random_state(rng, spec32):
    row = zero_mean_rows(rng, 32, 1)[0]
    return GridVector(row, spec32)
