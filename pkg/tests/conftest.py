import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_addoption(parser):
    parser.addoption(
        "--workers",
        type=int,
        default=2,
        help="worker processes for the ensemble-heavy acceptance tests",
    )


@pytest.fixture(scope="session")
def workers(request):
    return request.config.getoption("--workers")
