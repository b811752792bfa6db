import numpy as np
import pytest

from vmincqr import synth


@pytest.fixture(scope="session")
def small_ds():
    """Small synthetic population shared by dataset/metrics/CLI tests."""
    return synth.generate(n_chips=60, n_parametric=24, n_rod=6, n_cpd=2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
