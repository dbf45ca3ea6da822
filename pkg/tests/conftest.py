import numpy as np
import pytest

from pfmvb import Dataset, PriorSpec


def to_mpf(value):
    """Exact conversion of a float or longdouble into an mpmath number."""
    import mpmath as mp
    return mp.mpf(np.format_float_scientific(value, unique=True))


def random_instance(n, p, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    X = scale * rng.standard_normal((n, p))
    beta = rng.uniform(-2.0, 2.0, p)
    y = (rng.random(n) < 0.5 * (1 + np.tanh(X @ beta))).astype(float)
    return Dataset(y, X)


@pytest.fixture
def tiny():
    """n = 1, p = 1, X = [2], y = 1 with unit prior variance."""
    return Dataset(np.array([1.0]), np.array([[2.0]])), PriorSpec(1.0)
