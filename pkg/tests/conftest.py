import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_domain(rng, n, d, id="s", shift=0.0):
    from owarr import DomainDataset
    X = rng.standard_normal((n, d)) + shift
    beta = np.linspace(0.2, 0.6, d)
    y = 1 / (1 + np.exp(-(X @ beta))) + 0.05 * rng.standard_normal(n)
    return DomainDataset(id, X, np.clip(y, 0, 1))


@pytest.fixture
def make_domain():
    return random_domain
