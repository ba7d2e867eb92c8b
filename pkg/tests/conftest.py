from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from mfgcauchy.config import Config
from mfgcauchy.grid import DomainSpec, build_grid
from mfgcauchy.scenarios import Scenario

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def s1():
    return Scenario.builtin("S1")


@pytest.fixture(scope="session")
def s1_small():
    """S1 on a coarse grid for tests that rebuild objectives many times."""
    return Scenario.builtin("S1", **{"grid.nx1": 13, "grid.nt": 13})


@pytest.fixture(scope="session")
def grid1():
    return build_grid(DomainSpec(n=1, a=0.25, b=0.5, T=1.0, alpha=0.1), 21, 17)


@pytest.fixture(scope="session")
def grid2():
    return build_grid(DomainSpec(n=2, a=0.25, b=0.5, T=1.0, alpha=0.1, a_i=(0.25,)), 9, 7, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cfg_s1():
    return Config.builtin("S1")
