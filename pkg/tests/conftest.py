import numpy as np
import pytest

from rcbounds import dynsys, reservoir, training
from rcbounds.reservoir import EsnParams, Readout, TrainedEsn


def make_esn(L, d, A=None, C=None, gamma=1.0, zeta=None):
    """Hand-built EsnParams for small oracle cases."""
    import scipy.sparse as sp
    A = np.zeros((L, L)) if A is None else np.asarray(A, dtype=float)
    C = np.ones((L, d)) if C is None else np.asarray(C, dtype=float)
    zeta = np.zeros(L) if zeta is None else np.asarray(zeta, dtype=float)
    return EsnParams(A=sp.csr_matrix(A), C=C, zeta=zeta, gamma=gamma, seed=0,
                     spectral_radius=float("nan"))


def make_trained(params, W, a):
    return TrainedEsn.build(params, Readout(np.atleast_2d(W), np.atleast_1d(a)))


@pytest.fixture(scope="session")
def lorenz_data():
    """Two short observed Lorenz trajectories, 3000 rows each."""
    sysm = dynsys.lorenz()
    out = []
    for x0 in ([0.0, 1.0, 1.05], [0.0, 1.0, 1.05 + 1e-10]):
        out.append(dynsys.integrate(sysm, x0, 0.02, 2999))
    return out


@pytest.fixture(scope="session")
def small_esn(lorenz_data):
    """A 120-node ESN trained on the Lorenz fixture (washout 300)."""
    esn = reservoir.generate(1, 120, 3, spectral_radius=0.9, gamma=0.05)
    te = training.train_pipeline(esn, lorenz_data[0].head(2000), training.TrainSpec(300, 1e-10))
    return te


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
