# tests/conftest.py

import numpy as np
import pytest
import scipy.linalg

from dmd.snapshots import SnapshotSeries, TrainingSet
from solvers.grid import GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def simulate():
    """Returns a function running y_{k+1} = G y_k into a SnapshotSeries."""
    def run(G, y0, steps, dt=0.1, params=(0.0,)):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        states = [np.asarray(y0, dtype=float)]
        for _ in range(steps):
            states.append(G @ states[-1])
        return SnapshotSeries(np.asarray(params, dtype=float), np.arange(steps + 1) * dt, np.column_stack(states))
    return run


@pytest.fixture
def linear_system(rng):
    """
    A 5x5 real system with spectrum {0.95, 0.8 +- 0.3i, 0.6, 0.5} and a
    well-conditioned eigenbasis. Returns (G, spectrum).
    """
    core = scipy.linalg.block_diag([[0.8, -0.3], [0.3, 0.8]], 0.95, 0.6, 0.5)
    basis = np.eye(5) + 0.3 * rng.standard_normal((5, 5))
    G = basis @ core @ np.linalg.inv(basis)
    spectrum = np.array([0.95, 0.8 + 0.3j, 0.8 - 0.3j, 0.6, 0.5])
    return G, spectrum


@pytest.fixture
def modal_family(rng):
    """
    Returns a function building a training set whose members share three
    orthonormal modes in R^8 and whose eigenvalues move linearly with mu:
    (0.9 - 0.02 mu, 0.6 + 0.03 mu, -0.4 + 0.02 mu).
    """
    Q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
    amplitudes = np.array([1.0, 0.8, 0.6])

    def eigenvalues(mu):
        return np.array([0.9 - 0.02 * mu, 0.6 + 0.03 * mu, -0.4 + 0.02 * mu])

    def series(mu, steps=24, dt=0.1, scale=1.0):
        lam = eigenvalues(mu)
        states = np.column_stack([Q @ (scale * amplitudes * lam ** k) for k in range(steps + 1)])
        return SnapshotSeries(np.array([mu], dtype=float), np.arange(steps + 1) * dt, states)

    def build(mus=(1.0, 2.0, 3.0, 4.0), **kwargs):
        return TrainingSet(tuple(series(mu, **kwargs) for mu in mus), ("mu",))

    build.series = series
    build.eigenvalues = eigenvalues
    return build


@pytest.fixture
def scalar_family():
    """Returns a function building scalar series y_k = lambda(mu)^k from (mu, lambda) pairs."""
    def build(pairs, steps=10, dt=1.0):
        return TrainingSet(
            tuple(
                SnapshotSeries(np.array([mu]), np.arange(steps + 1) * dt, (lam ** np.arange(steps + 1)).reshape(1, -1))
                for mu, lam in pairs
            ),
            ("mu",),
        )
    return build


@pytest.fixture
def tiny_grid_2d():
    """8 x 4 cells on [0,2] x [0,1], five steps of 0.05."""
    return GridSpec(dims=(8, 4), domain=((0.0, 2.0), (0.0, 1.0)), dt=0.05, t_end=0.25)


@pytest.fixture
def tiny_grid_3d():
    """4^3 cells on the unit cube, three steps of 0.001."""
    return GridSpec(dims=(4, 4, 4), domain=((0.0, 1.0),) * 3, dt=0.001, t_end=0.003)
