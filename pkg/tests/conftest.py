import numpy as np
import pytest

from hotml.model import DetectionInstance, Mode
from hotml.objective import build_context


def onebit_ctx(G, sigma0=0.0):
    """Context whose G matrix is exactly ``G`` (y = 1, sigma = 1)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    inst = DetectionInstance(G, np.ones(G.shape[0]), 1.0, np.ones(G.shape[1]), Mode.ONE_BIT)
    return build_context(inst, sigma0)


def classical_ctx(H, y, x_true=None, sigma=0.0):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    x_true = np.ones(H.shape[1]) if x_true is None else x_true
    return build_context(DetectionInstance(H, np.asarray(y, dtype=float), sigma, x_true, Mode.CLASSICAL))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
