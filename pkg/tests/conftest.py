import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_profile(rng, n, n_modes=None):
    """Random real profile on ``n`` points with modes above ``n_modes`` zeroed."""
    u = rng.standard_normal(n)
    if n_modes is not None:
        c = np.fft.rfft(u)
        c[n_modes:] = 0.0
        u = np.fft.irfft(c, n)
    return u
