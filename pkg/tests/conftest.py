from __future__ import annotations

import numpy as np
import pytest

from hmcf_lab.metric import ConformalDipole, MetricParams
from hmcf_lab.sphere import get_grid


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run minutes-long acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: minutes-long acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def flat() -> MetricParams:
    return MetricParams(m=0.0)


@pytest.fixture
def schwarzschild() -> MetricParams:
    return MetricParams(m=1.0)


@pytest.fixture
def dipole() -> MetricParams:
    return MetricParams(m=1.0, perturbation=ConformalDipole(B=(0.5, 0.0, 0.0)))


@pytest.fixture
def grid16():
    return get_grid(16)


@pytest.fixture
def grid24():
    return get_grid(24)


def phi(m: float, r: float) -> float:
    return 1.0 + m / (2.0 * r)


def areal_radius(m: float, r: float) -> float:
    return r * phi(m, r) ** 2


def sphere_F(m: float, r: float) -> float:
    """Closed-form F = H/4 of the coordinate sphere |x| = r in Schwarzschild."""
    return 0.5 * (1.0 - m / (2.0 * r)) / (r * phi(m, r) ** 3)


def random_directions(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1)[:, None]
