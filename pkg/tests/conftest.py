import numpy as np
import pytest

from eitcvx.experiment import ExperimentConfig, random_pair, _random_smooth
from eitcvx.functional import ConvexParams
from eitcvx.geometry import GeometryConfig, omega_grid


@pytest.fixture(scope="session")
def geo():
    return GeometryConfig()


@pytest.fixture(scope="session")
def omega41(geo):
    return omega_grid(geo, 1 / 40)[0]


@pytest.fixture(scope="session")
def omega21(geo):
    return omega_grid(geo, 1 / 20)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def desk_params():
    return ConvexParams(lam=3.0, alpha=0.01, eps=0.0002)


@pytest.fixture
def tiny_config():
    """Coarse but complete configuration: runs the whole pipeline in seconds."""
    return ExperimentConfig(phantom="disk", sigma_a=2.0, h_G=1 / 20, h_omega=1 / 10, N=8)


def make_pair(grid, rng, eps, amp=1.0):
    return random_pair(grid, rng, eps, amp)


def smooth(grid, rng, amp=1.0):
    return _random_smooth(grid, rng, amp)
