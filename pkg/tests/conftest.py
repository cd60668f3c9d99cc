import numpy as np
import pytest

from sglab.kernels import KernelSpec, MollifierSpec, covariance_Q_eps
from sglab.spacetime import TorusGrid


@pytest.fixture(scope="session")
def kspec():
    return KernelSpec()


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(N=32, cfl=1.0)


@pytest.fixture(scope="session")
def cov32(kspec, grid32):
    return covariance_Q_eps(kspec, MollifierSpec("bump", 1 / 8), 2 * np.pi, grid32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_COV128 = {}


@pytest.fixture(scope="session")
def cov128(kspec):
    """Cached N = 128 covariances at beta^2 = 2 pi, keyed by eps (use with_beta2 for others)."""
    g = TorusGrid(N=128, cfl=1.0)

    def get(eps):
        if eps not in _COV128:
            _COV128[eps] = covariance_Q_eps(kspec, MollifierSpec("bump", eps), 2 * np.pi, g)
        return _COV128[eps]
    return get
