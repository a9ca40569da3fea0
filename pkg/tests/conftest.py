# Pick the faster BLAS kernels before numpy first loads (see wtckit.__init__).
import wtckit  # noqa: F401  (import order matters)

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def rel_err(got, want, floor=1e-6):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return np.abs(got - want).max() / max(np.abs(want).max(), floor)
