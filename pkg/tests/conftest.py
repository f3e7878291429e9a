import numpy as np
import pytest

from mnmt.tensor import using_dtype


@pytest.fixture
def f64():
    """Run the test under float64 (verification precision)."""
    with using_dtype("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)
