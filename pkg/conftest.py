"""
Shared pytest fixtures: the testbed prior, spectral laws and solved fixed points.

Desk-scale acceptance runs are marked `slow` and only run with --runslow.
"""
import pytest

from src.theory.prior import rademacher
from src.theory.replica import solve_fixed_point
from src.theory.spectrum import two_point


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run desk-scale acceptance tests (n = 4000, 400 replicates)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def prior():
    return rademacher()


@pytest.fixture(scope="session")
def law():
    return two_point(1.0, 0.05)


@pytest.fixture(scope="session")
def narrow_law():
    return two_point(1.0, 0.01)


@pytest.fixture(scope="session")
def fp(prior, law):
    return solve_fixed_point(prior, law)
