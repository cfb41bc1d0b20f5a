import math
import warnings

import numpy as np
import pytest

from qndfeedback.core import populations
from qndfeedback.errors import Assumption2Violation, HypothesisViolation
from qndfeedback.lyapunov import check_laplacian, connectivity_graph, laplacian
from qndfeedback.measurement import outcome_probabilities
from qndfeedback.photonbox import (
    PhotonBoxParams,
    annihilation,
    coherent_init,
    displacement_hamiltonian,
    number_operator,
    photonbox_kraus,
    photonbox_laplacian_oracle,
    photonbox_weights,
    poisson_populations,
)
from qndfeedback.core import basis_state


def test_defaults(params):
    assert (params.n_max, params.target, params.u_bound) == (10, 3, 0.1)
    assert params.theta == math.sqrt(2) / 5
    assert params.phi0 == pytest.approx(math.pi / 4 - 3 * params.theta, abs=0)
    assert params.epsilon == 1 / 42


def test_annihilation():
    np.testing.assert_array_equal(annihilation(1), [[0, 1], [0, 0]])
    np.testing.assert_allclose(np.diagonal(annihilation(3), 1), [1, math.sqrt(2), math.sqrt(3)])
    a = annihilation(6)
    np.testing.assert_allclose(a.conj().T @ a, np.diag(np.arange(7.0)), atol=1e-14)
    with pytest.raises(ValueError):
        annihilation(0)


def test_number_operator():
    N = number_operator(2).data
    np.testing.assert_array_equal(N, np.diag([0, 1, 2]))
    D = np.diag([3.0, -1.0, 2.5])
    np.testing.assert_array_equal(N @ D, D @ N)
    for k in range(3):
        assert np.trace(N @ basis_state(k, 3).data).real == k


def test_kraus(params):
    k = photonbox_kraus(params)
    assert outcome_probabilities(k, basis_state(3, 11))[0] == pytest.approx(0.5, abs=1e-15)
    total = sum(M.conj().T @ M for M in k.operators)
    assert np.max(np.abs(total - np.eye(11))) <= 1e-14
    with pytest.raises(Assumption2Violation):
        photonbox_kraus(PhotonBoxParams(theta=0.0))


def test_hamiltonian():
    np.testing.assert_array_equal(displacement_hamiltonian(1).data, [[0, -1j], [1j, 0]])
    h = displacement_hamiltonian(10).data
    np.testing.assert_array_equal(h, h.conj().T)
    assert np.all(np.diagonal(h) == 0) and np.all(np.diagonal(h, 1).real == 0)
    assert connectivity_graph(h).connected


def test_coherent_state():
    np.testing.assert_allclose(coherent_init(10, 0.0).data, basis_state(0, 11).data, atol=1e-15)
    rho = coherent_init(10, math.sqrt(3))
    assert np.trace(rho.data @ rho.data).real == pytest.approx(1, abs=1e-10)
    p = populations(rho)
    assert abs(p @ np.arange(11) - 3) < 1e-3
    assert np.max(np.abs(p[:9] - poisson_populations(10, 3.0)[:9])) < 1e-3


def test_poisson_oracle():
    p = poisson_populations(10, 3.0)
    assert p[0] == pytest.approx(math.exp(-3))
    assert p[3] == pytest.approx(math.exp(-3) * 27 / 6)
    np.testing.assert_array_equal(poisson_populations(4, 0.0), [1, 0, 0, 0, 0])


def test_laplacian_oracle_values():
    R = photonbox_laplacian_oracle(10)
    assert (R[5, 5], R[4, 5], R[6, 5]) == (22, -10, -12)
    assert np.max(np.abs(R.sum(axis=1))) == 0


@pytest.mark.parametrize("n_max", [2, 5, 10])
def test_laplacian_oracle_matches_generic(n_max):
    R = laplacian(displacement_hamiltonian(n_max))
    oracle = photonbox_laplacian_oracle(n_max)
    assert np.max(np.abs(R - oracle)) <= 1e-12
    np.testing.assert_array_equal(np.rint(R), oracle)
    assert check_laplacian(R) == []


def test_epsilon_enforced():
    with pytest.raises(HypothesisViolation):
        PhotonBoxParams(epsilon=0.05)
    with pytest.raises(HypothesisViolation):
        PhotonBoxParams(epsilon=0.0)
    PhotonBoxParams(epsilon=1 / 22)


def test_sigma_profile(params):
    w = photonbox_weights(params)
    assert int(np.argmax(w.sigma)) == 3 and w.residual <= 1e-10


def test_target_at_truncation_warns():
    with pytest.warns(UserWarning, match="truncation"):
        PhotonBoxParams(n_max=4, target=4, epsilon=0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        PhotonBoxParams()
