import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polarplace import ScanSpec, generate_world, simulate_scan

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")


@pytest.fixture(scope="session")
def world():
    return generate_world(7, n_landmarks=150, extent_m=240.0)


@pytest.fixture(scope="session")
def scan(world):
    return simulate_scan(world, ScanSpec((3.0, -4.0, 0.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
