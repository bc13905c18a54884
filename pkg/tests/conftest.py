import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from springcast.data import SyntheticSpec, generate_synthetic, prepare

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def table():
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="session")
def splits(table):
    return prepare(table, 311)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
