import numpy as np
import pytest

from mixattn import tensor as T


@pytest.fixture(autouse=True)
def _default_precision():
    T.set_precision("f32")
    yield
    T.set_precision("f32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand4(rng, shape, dtype=None):
    return T.tensor4(rng.standard_normal(shape)) if dtype is None else rng.standard_normal(shape).astype(dtype)
