import numpy as np
import pytest

from tki import bloch, models
from tki.grids import BZGrid


def random_skew(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A - A.T


def random_unitary(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(A)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (A + A.conj().T)


def cofactor_pfaffian(A):
    """Recursive cofactor expansion; independent reference for small matrices."""
    A = np.asarray(A, dtype=complex)
    n = A.shape[0]
    if n == 0:
        return 1.0 + 0.0j
    if n % 2:
        return 0.0 + 0.0j
    if n == 2:
        return A[0, 1]
    total = 0.0 + 0.0j
    rest = list(range(1, n))
    for pos, j in enumerate(rest):
        keep = [i for i in rest if i != j]
        sub = A[np.ix_(keep, keep)]
        total += (-1) ** pos * A[0, j] * cofactor_pfaffian(sub)
    return total


class _PipelineCache:
    """Share diagonalization and gauge work across tests in one session."""

    def __init__(self):
        self._store = {}

    def key(self, name, params, n):
        return (name, tuple(sorted(params.items())), n)

    def raw(self, name, params, n, dim=3):
        k = ("raw",) + self.key(name, params, n)
        if k not in self._store:
            model = models.make_model(name, params)
            self._store[k] = bloch.diagonalize_grid(
                model, BZGrid.cubic(dim, n))
        return self._store[k]

    def gauge(self, name, params, n, dim=3, limit=1.0):
        k = ("gauge",) + self.key(name, params, n)
        if k not in self._store:
            model = models.make_model(name, params)
            frames = bloch.smooth_gauge(self.raw(name, params, n, dim))
            wred = bloch.su_reduce(bloch.sewing_field(
                frames, model.theta, smoothness_limit=limit))
            self._store[k] = (frames, wred)
        return self._store[k]


@pytest.fixture(scope="session")
def pipeline():
    return _PipelineCache()
