import numpy as np
import pytest

from fluopat.experiments import RunConfig, build_setup
from fluopat.grid import build_mesh, build_ordinates
from fluopat.rte import Discretization


@pytest.fixture(scope="session")
def disc_8x16():
    return Discretization(build_mesh(8), build_ordinates(16))


@pytest.fixture(scope="session")
def disc_8x8():
    return Discretization(build_mesh(8), build_ordinates(8))


@pytest.fixture(scope="session")
def disc_4x8():
    return Discretization(build_mesh(4), build_ordinates(8))


@pytest.fixture(scope="session")
def setup_8x8():
    """Checkerboard media + default phantom truth on a small grid."""
    return build_setup(RunConfig(mesh=8, ordinates=8))


@pytest.fixture(scope="session")
def setup_8x16():
    return build_setup(RunConfig(mesh=8, ordinates=16))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria tests")
