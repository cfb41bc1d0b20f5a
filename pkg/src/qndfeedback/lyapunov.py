"""Construction of strict control-Lyapunov weights from the control Hamiltonian.

The coupling pattern of ``H`` defines a graph on basis states whose
Laplacian ``R`` (entries ``2(delta <n|H^2|n> - |<n|H|l>|^2)``) is inverted on
the complement of its kernel to obtain weights ``sigma`` with
``R sigma = -lambda``. The resulting functions

    W0(rho)   = sum_n sigma_n <n|rho|n>
    Weps(rho) = W0(rho) + eps/4 sum_n <n|rho|n>^2

are maximal at the target basis state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from .core import DEFAULT_TOLERANCES, HermitianOperator, Tolerances, _as_array, populations
from .errors import DisconnectedGraph, HypothesisViolation, SingularSolve


@dataclass(frozen=True)
class ConnectivityGraph:
    n_vertices: int
    edges: frozenset
    n_components: int
    labels: tuple

    @property
    def connected(self) -> bool:
        return self.n_components == 1

    def components(self) -> list[list[int]]:
        groups = {}
        for v, lab in enumerate(self.labels):
            groups.setdefault(lab, []).append(v)
        return sorted(groups.values())


def connectivity_graph(H, edge_tol: float = DEFAULT_TOLERANCES.edge) -> ConnectivityGraph:
    """Graph with an edge ``{n1, n2}`` whenever ``|<n1|H|n2>| > edge_tol``."""
    h = _as_array(H)
    d = h.shape[0]
    adj = np.abs(h) > edge_tol
    np.fill_diagonal(adj, False)
    adj = adj | adj.T
    edges = frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(adj))))
    ncomp, labels = connected_components(adj, directed=False)
    return ConnectivityGraph(d, edges, int(ncomp), tuple(int(x) for x in labels))


def laplacian(H) -> np.ndarray:
    """Real symmetric Laplacian attached to ``H``.

    Zero row sums follow from ``<n|H^2|n> = sum_l |<n|H|l>|^2``.
    """
    h = _as_array(H)
    h2_diag = np.einsum("ij,ji->i", h, h).real
    R = -2.0 * np.abs(h) ** 2
    R[np.diag_indices_from(R)] = 2.0 * (h2_diag - np.abs(np.diagonal(h)) ** 2)
    return (R + R.T) / 2


def check_laplacian(R, tol: float = 1e-10) -> list[str]:
    """Return the list of violated Laplacian invariants (empty when valid)."""
    R = np.asarray(R)
    problems = []
    if np.max(np.abs(R - R.T)) > 1e-12:
        problems.append("not symmetric")
    if np.max(np.abs(R.sum(axis=1))) > tol:
        problems.append("nonzero row sums")
    off = R - np.diag(np.diagonal(R))
    if np.any(off > tol):
        problems.append("positive off-diagonal entry")
    if np.any(np.diagonal(R) < -tol):
        problems.append("negative diagonal entry")
    return problems


def gap_vector(gaps, target: int, dim: int) -> np.ndarray:
    """Full ``lambda`` vector: the given positive gaps off target, minus their sum on target.

    ``gaps`` may be a scalar, a length ``dim`` vector (the target entry is
    ignored) or a length ``dim - 1`` vector listing the off-target gaps in order.
    """
    g = np.asarray(gaps, dtype=float)
    if g.ndim == 0:
        lam = np.full(dim, float(g))
    elif g.shape == (dim,):
        lam = g.copy()
    elif g.shape == (dim - 1,):
        lam = np.insert(g, target, 0.0)
    else:
        raise ValueError(f"gaps must be scalar, length {dim} or length {dim - 1}")
    off = np.delete(lam, target)
    if np.any(off <= 0):
        raise ValueError("gaps off the target must be strictly positive")
    lam[target] = -off.sum()
    return lam


def solve_sigma(R, lambda_gaps, target: int, gauge: str = "min-norm") -> np.ndarray:
    """Solve ``R sigma = -lambda`` for the Lyapunov weights.

    Args:
        R: Laplacian from :func:`laplacian`.
        lambda_gaps: positive gaps, see :func:`gap_vector`.
        target: index of the state to stabilize.
        gauge: ``"min-norm"`` (sigma orthogonal to the constant vector) or
            ``"target-zero"`` (sigma[target] = 0).

    Raises:
        DisconnectedGraph: the kernel of ``R`` is larger than the constants,
            so ``-lambda`` need not be in its image.
        SingularSolve: the pinned system is rank deficient or the residual
            is too large.
    """
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    lam = gap_vector(lambda_gaps, target, d)
    adj = (np.abs(R) > 0) & ~np.eye(d, dtype=bool)
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp > 1:
        raise DisconnectedGraph(f"coupling graph has {ncomp} components")
    # Pinning row fixes the free constant; the stacked system has full column rank.
    A = np.vstack([R, np.ones((1, d))])
    b = np.concatenate([-lam, [0.0]])
    Q, Rq = np.linalg.qr(A)
    diag = np.abs(np.diagonal(Rq))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise SingularSolve("pinned Laplacian system is rank deficient")
    sigma = np.linalg.solve(Rq, Q.T @ b)
    resid = np.max(np.abs(R @ sigma + lam))
    if resid > 1e-10 * max(1.0, np.abs(lam).max()):
        raise SingularSolve(f"residual {resid:.3e} too large")
    if gauge == "target-zero":
        sigma = sigma - sigma[target]
    elif gauge != "min-norm":
        raise ValueError(f"unknown gauge {gauge!r}")
    return sigma


def epsilon_max(H, lambda_gaps, target: int) -> float:
    """Supremum of admissible ``eps``: ``lambda_n + eps(<n|H|n>^2 - <n|H^2|n>) > 0`` for all ``n != target``."""
    h = _as_array(H)
    d = h.shape[0]
    lam = gap_vector(lambda_gaps, target, d)
    h2 = np.einsum("ij,ji->i", h, h).real
    curv = np.diagonal(h).real ** 2 - h2
    bound = math.inf
    for n in range(d):
        if n != target and curv[n] < 0:
            bound = min(bound, lam[n] / -curv[n])
    return bound


@dataclass(frozen=True, eq=False)
class LyapunovWeights:
    target: int
    gaps: np.ndarray
    sigma: np.ndarray
    epsilon: float
    residual: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.sigma)

    def shifted(self, c: float) -> "LyapunovWeights":
        """Same weights in another gauge: ``sigma + c``."""
        return replace(self, sigma=self.sigma + c)


def synthesize(H, target: int, lambda_gaps=1.0, epsilon: float | None = None, gauge: str = "min-norm",
               tolerances: Tolerances = DEFAULT_TOLERANCES) -> LyapunovWeights:
    """Build validated weights for ``H``.

    ``epsilon`` defaults to half of :func:`epsilon_max` (or 1 when unbounded).

    Raises:
        HypothesisViolation: ``epsilon`` is not admissible or ``sigma`` has
            no strict maximum at the target.
    """
    h = H if isinstance(H, HermitianOperator) else HermitianOperator(np.asarray(H, dtype=complex))
    R = laplacian(h)
    lam = gap_vector(lambda_gaps, target, h.dim)
    sigma = solve_sigma(R, lam, target, gauge)
    eps_sup = epsilon_max(h, lam, target)
    if epsilon is None:
        epsilon = 1.0 if math.isinf(eps_sup) else eps_sup / 2
    if not 0 < epsilon < eps_sup:
        raise HypothesisViolation(f"epsilon={epsilon} must lie in (0, {eps_sup})")
    others = np.delete(sigma, target)
    if others.size and not np.all(sigma[target] > others):
        raise HypothesisViolation("sigma is not strictly maximal at the target")
    resid = float(np.max(np.abs(R @ sigma + lam)))
    return LyapunovWeights(target, lam, sigma, float(epsilon), resid)


def W0(weights: LyapunovWeights, rho) -> float:
    return float(weights.sigma @ populations(rho))


def Weps(weights: LyapunovWeights, rho) -> float:
    p = populations(rho)
    return float(weights.sigma @ p + weights.epsilon / 4 * (p @ p))


def second_derivative_check(H, weights: LyapunovWeights, n: int) -> float:
    """Analytic curvature of ``u -> W0(U_u |n><n| U_u^dag)`` at zero, i.e. ``-(R sigma)_n``."""
    return float(-(laplacian(H) @ weights.sigma)[n])
