import numpy as np
import pytest

from ctac.sim import RandomSource


@pytest.fixture
def rng():
    return RandomSource(20240611, 0)


def within_se(est, target, se, k):
    """Componentwise |est - target| <= k * se."""
    est, target, se = np.broadcast_arrays(np.asarray(est, float), np.asarray(target, float), np.asarray(se, float))
    return bool(np.all(np.abs(est - target) <= k * se))
