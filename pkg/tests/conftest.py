import numpy as np
import pytest

from qndfeedback import photonbox
from qndfeedback.core import make_density


def random_density(rng, dim, rank=None):
    """Random state from a complex Ginibre matrix of the given rank."""
    rank = rank or dim
    G = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = G @ G.conj().T
    return make_density(rho / np.trace(rho).real)


def random_states(seed, dim, count):
    rng = np.random.default_rng(seed)
    return [random_density(rng, dim, int(rng.integers(1, dim + 1))) for _ in range(count)]


def random_hermitian(rng, dim):
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (A + A.conj().T) / 2


@pytest.fixture(scope="session")
def params():
    return photonbox.PhotonBoxParams()


@pytest.fixture(scope="session")
def ctx(params):
    return photonbox.build_context(params)


@pytest.fixture(scope="session")
def kraus(ctx):
    return ctx.kraus


@pytest.fixture(scope="session")
def H(ctx):
    return ctx.control.hamiltonian


@pytest.fixture(scope="session")
def rho0(params):
    return photonbox.initial_state(params)
