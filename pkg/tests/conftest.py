import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nsstab.spectral import ChiMask, build_space


@pytest.fixture(scope="session")
def small_space():
    """K=12 model on a 16^2 grid; enough for exact-oracle comparisons."""
    return build_space(nu=0.1, K=12, n=16)


@pytest.fixture(scope="session")
def medium_space():
    return build_space(nu=0.1, K=24, n=16)


@pytest.fixture(scope="session")
def bump_mask(small_space):
    return ChiMask.bump(small_space, center=(np.pi, np.pi), radius=2.2, rho=0.1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260808)
