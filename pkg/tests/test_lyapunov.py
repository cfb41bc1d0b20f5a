import math

import numpy as np
import pytest
from scipy.linalg import block_diag

from qndfeedback.core import HermitianOperator, apply_unitary, basis_state, make_hermitian, propagator
from qndfeedback.errors import DisconnectedGraph, HypothesisViolation
from qndfeedback.feedback import feedback
from qndfeedback.lyapunov import (
    W0,
    Weps,
    check_laplacian,
    connectivity_graph,
    epsilon_max,
    gap_vector,
    laplacian,
    second_derivative_check,
    solve_sigma,
    synthesize,
)
from qndfeedback.measurement import collapse, outcome_probabilities
from qndfeedback.photonbox import displacement_hamiltonian

from conftest import random_hermitian, random_states

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)


def test_graph_photonbox_is_path(H):
    g = connectivity_graph(H)
    assert g.connected
    assert g.edges == frozenset((n, n + 1) for n in range(10))


def test_graph_diagonal_and_blocks():
    g = connectivity_graph(np.diag([1.0, 2.0, 3.0]))
    assert g.edges == frozenset() and not g.connected and g.n_components == 3
    h = block_diag(SIGMA_X, SIGMA_X)
    g = connectivity_graph(h)
    assert g.components() == [[0, 1], [2, 3]]


def test_graph_edge_tol():
    h = np.array([[0, 1e-13], [1e-13, 0]])
    assert not connectivity_graph(h).connected
    assert connectivity_graph(h, edge_tol=1e-14).connected


def test_laplacian_two_level():
    np.testing.assert_array_equal(laplacian(SIGMA_X), [[2, -2], [-2, 2]])


def test_laplacian_truncated_three_level():
    R = laplacian(displacement_hamiltonian(2))
    np.testing.assert_allclose(R, [[2, -2, 0], [-2, 6, -4], [0, -4, 4]], atol=1e-12)


def test_laplacian_invariants_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        h = random_hermitian(rng, int(rng.integers(2, 11)))
        R = laplacian(h)
        assert check_laplacian(R) == []
        assert np.max(np.abs(R @ np.ones(len(R)))) <= 1e-10


def test_check_laplacian_flags_problems():
    assert "nonzero row sums" in check_laplacian(np.eye(2))
    assert "positive off-diagonal entry" in check_laplacian([[-1, 1], [1, -1]])


def test_commutator_identity(H):
    h = H.data
    R = laplacian(H)
    d = H.dim
    for n in range(d):
        Pn = basis_state(n, d).data
        for l in range(d):
            Pl = basis_state(l, d).data
            val = np.trace((h @ Pn - Pn @ h) @ (h @ Pl - Pl @ h))
            assert abs(val + R[n, l]) <= 1e-10


def test_gap_vector_forms():
    np.testing.assert_array_equal(gap_vector(1.0, 1, 3), [1, -2, 1])
    np.testing.assert_array_equal(gap_vector([2.0, 5.0], 0, 3), [-7, 2, 5])
    np.testing.assert_array_equal(gap_vector([2.0, 9.0, 5.0], 1, 3), [2, -7, 5])
    with pytest.raises(ValueError):
        gap_vector([1.0, 0.0], 0, 3)


def test_solve_two_level():
    sigma = solve_sigma(laplacian(SIGMA_X), 1.0, target=1)
    np.testing.assert_allclose(sigma, [-0.25, 0.25], atol=1e-15)
    np.testing.assert_allclose(solve_sigma(laplacian(SIGMA_X), 1.0, 1, gauge="target-zero"), [-0.5, 0], atol=1e-15)


def test_solve_photonbox(H, params):
    R = laplacian(H)
    lam = gap_vector(1.0, 3, 11)
    sigma = solve_sigma(R, lam, 3)
    assert np.max(np.abs(R @ sigma + lam)) <= 1e-10
    assert abs(sigma.sum()) <= 1e-12
    assert int(np.argmax(sigma)) == 3
    assert np.all(np.delete(sigma, 3) < sigma[3])
    shifted = sigma + 4.2
    assert np.max(np.abs(R @ shifted + lam)) <= 1e-10


def test_solve_disconnected_raises():
    with pytest.raises(DisconnectedGraph):
        solve_sigma(laplacian(block_diag(SIGMA_X, SIGMA_X)), 1.0, 0)


def test_epsilon_max():
    assert epsilon_max(displacement_hamiltonian(10), 1.0, 3) == pytest.approx(1 / 19)
    assert epsilon_max(np.zeros((3, 3)), 1.0, 0) == math.inf
    assert 1 / 42 < epsilon_max(displacement_hamiltonian(10), 1.0, 3)
    # the uniform bound is never looser than the exact one
    assert 1 / 21 <= epsilon_max(displacement_hamiltonian(10), 1.0, 3)


def test_synthesize_validates(H):
    w = synthesize(H, 3, 1.0, epsilon=1 / 42)
    assert w.residual <= 1e-10
    with pytest.raises(HypothesisViolation):
        synthesize(H, 3, 1.0, epsilon=0.06)
    assert synthesize(H, 3).epsilon == pytest.approx(1 / 38)


def test_W0_and_Weps_examples(ctx):
    w = ctx.weights
    for n in range(11):
        assert W0(w, basis_state(n, 11)) == pytest.approx(w.sigma[n], abs=1e-15)
    top = Weps(w, basis_state(3, 11))
    assert top == pytest.approx(w.sigma[3] + w.epsilon / 4, abs=1e-15)
    for n in range(11):
        if n != 3:
            assert Weps(w, basis_state(n, 11)) < top
    for rho in random_states(4, 11, 20):
        assert W0(w.shifted(0.7), rho) == pytest.approx(W0(w, rho) + 0.7, abs=1e-12)
        assert Weps(w, rho) < top
    zero = type(w)(w.target, w.gaps, w.sigma, 0.0)
    rho = random_states(5, 11, 1)[0]
    assert Weps(zero, rho) == W0(w, rho)


def test_W0_open_loop_martingale(ctx):
    w, k = ctx.weights, ctx.kraus
    for rho in random_states(6, 11, 50):
        p = outcome_probabilities(k, rho)
        avg = sum(p[mu] * W0(w, collapse(k, mu, rho)) for mu in range(k.count))
        assert abs(avg - W0(w, rho)) <= 1e-10


def _fd_curvature(H, w, n, h):
    f = lambda u: W0(w, apply_unitary(propagator(H, u), basis_state(n, H.dim)))  # noqa: E731
    return (f(h) - 2 * f(0.0) + f(-h)) / h**2


def test_second_derivative_analytic(ctx, H):
    w = ctx.weights
    for n in range(11):
        expected = -10.0 if n == 3 else 1.0
        assert abs(second_derivative_check(H, w, n) - expected) <= 1e-10


def test_second_derivative_finite_difference(ctx, H):
    w = ctx.weights
    for n in range(11):
        a = second_derivative_check(H, w, n)
        fd = _fd_curvature(H, w, n, 1e-4)
        assert abs(a - fd) <= 1e-6 * max(1.0, abs(a))
    assert _fd_curvature(H, w, 0, 1e-4) == pytest.approx(1.0, abs=1e-6)


def test_finite_difference_at_coarse_step_is_truncation_limited(ctx, H):
    # the 3-point stencil error scales as h^2: about 1e-5 at h = 1e-3
    w = ctx.weights
    errs = [abs(second_derivative_check(H, w, n) - _fd_curvature(H, w, n, 1e-3)) for n in range(11)]
    assert max(errs) <= 1e-4


def test_gauge_shift_keeps_controls(ctx):
    shifted = ctx.with_weights(ctx.weights.shifted(7.3))
    for rho in random_states(8, 11, 40):
        assert feedback(ctx, rho) == feedback(shifted, rho)
        ex = ctx.with_mode("exact")
        assert feedback(ex, rho) == feedback(ex.with_weights(ctx.weights.shifted(-2.1)), rho)
