import os
import sys

import numpy as np
import pytest

# Add the app directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from models.geometry import PointCloud  # noqa: E402
from services.field_grid import init_grid  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return init_grid(4, 3, seed=7)


@pytest.fixture
def dyadic_cloud():
    """64 points on a 1/8 lattice, so sums and scalings by powers of two are exact."""
    rng = np.random.default_rng(42)
    return PointCloud(points=rng.integers(-8, 9, size=(64, 3)) / 8.0)
