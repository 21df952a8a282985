import numpy as np
import pytest

from midpool.autodiff import Tensor
from midpool import autodiff as ad


def finite_difference(build_loss, params, eps=1e-5):
    """Central finite differences of a scalar loss over a list of parameter
    arrays. ``build_loss`` takes the parameter arrays and returns a float."""
    grads = []
    for pi, p in enumerate(params):
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + eps
            up = build_loss(params)
            p[idx] = orig - eps
            down = build_loss(params)
            p[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
