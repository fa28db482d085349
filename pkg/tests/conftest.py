import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_labels(rng, n, c, soft=False):
    if soft:
        p = rng.dirichlet(np.ones(c), size=n)
        return p
    out = np.zeros((n, c))
    out[np.arange(n), np.arange(n) % c] = 1.0
    return out


# hypothesis draws a seed and sizes; arrays come from numpy so shrinking stays cheap
seeds = st.integers(0, 2**32 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
