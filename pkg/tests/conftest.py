import numpy as np
import pytest

from quadrica import kernels
from quadrica.confocal import diagonal_qwc
from quadrica.lmap import build_lmap


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # first numba compile is slow; do it once before any timing-sensitive test
    kernels.warmup()


@pytest.fixture(scope="session")
def q2():
    return diagonal_qwc((1.7, 1.0))


@pytest.fixture(scope="session")
def lm2(q2):
    return build_lmap(q2)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
