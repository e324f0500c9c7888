import numpy as np
import pytest

from grfuse import backend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _backends():
    return ["numpy", "numba"] if backend.HAS_NUMBA else ["numpy"]


@pytest.fixture(params=_backends())
def kernel_backend(request):
    """Run the test once per available kernel backend."""
    previous = backend.active_backend()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(previous)


def random_symmetric(rng, n, gap=None, dtype=np.float64):
    """Random symmetric matrix; optionally with eigenvalue gaps >= gap."""
    a = rng.standard_normal((n, n))
    s = (a + a.T) / 2
    if gap is None:
        return s.astype(dtype)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(rng.uniform(0.0, 1.0, n))[::-1] + gap * np.arange(n)[::-1] * 2
    return (q @ np.diag(lam) @ q.T).astype(dtype)


def random_orthobasis(rng, d, q, dtype=np.float64):
    a = rng.standard_normal((d, q))
    qmat, _ = np.linalg.qr(a)
    return qmat.astype(dtype)
