import pytest

from ramandetect.atom import build_ba137
from ramandetect.pumping import default_setup, rate_matrix


@pytest.fixture(scope="session")
def atom():
    return build_ba137()


@pytest.fixture(scope="session")
def setup():
    return default_setup()


@pytest.fixture(scope="session")
def R(setup):
    return rate_matrix(setup)
