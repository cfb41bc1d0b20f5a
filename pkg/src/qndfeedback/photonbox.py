"""Photon-box preset: truncated cavity mode probed by atoms, controlled by displacements.

Photon numbers are 0-indexed, ``n in {0, ..., n_max}``. The measurement
pair is ``M_g = cos(phi0 + theta N)``, ``M_e = sin(phi0 + theta N)`` and the
control Hamiltonian ``H = i(a^dag - a)`` generates displacements.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DensityMatrix, HermitianOperator, _frozen, apply_unitary, basis_state, propagator
from .errors import Assumption2Violation, HypothesisViolation
from .feedback import ClosedLoopContext, ControlModel
from .lyapunov import LyapunovWeights, gap_vector, laplacian, solve_sigma
from .measurement import KrausSet, validate_kraus

DEFAULT_THETA = math.sqrt(2) / 5


@dataclass(frozen=True)
class PhotonBoxParams:
    """Experiment parameters; ``None`` fields take their defaults from the others.

    Construction raises :class:`HypothesisViolation` when ``epsilon`` is not
    below the uniform bound ``1 / (2 n_max + 1)``.
    """

    n_max: int = 10
    target: int = 3
    theta: float = DEFAULT_THETA
    phi0: float | None = None  # pi/4 - target * theta
    epsilon: float | None = None  # 1 / (4 n_max + 2)
    u_bound: float = 0.1
    lambda_gaps: tuple | float = 1.0
    alpha: float | None = None  # sqrt(target)
    mode: str = "quadratic"

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0 <= self.target <= self.n_max:
            raise ValueError(f"target must lie in [0, {self.n_max}]")
        if self.phi0 is None:
            object.__setattr__(self, "phi0", math.pi / 4 - self.target * self.theta)
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 1.0 / (4 * self.n_max + 2))
        if self.alpha is None:
            object.__setattr__(self, "alpha", math.sqrt(self.target))
        if self.target == self.n_max:
            warnings.warn("target equals the truncation level; the top Fock state is distorted by truncation", stacklevel=2)
        bound = uniform_epsilon_bound(self.n_max)
        if not 0 < self.epsilon < bound:
            raise HypothesisViolation(f"epsilon={self.epsilon:g} violates 0 < epsilon < 1/(2 n_max + 1) = {bound:g}")

    @property
    def dim(self) -> int:
        return self.n_max + 1


def uniform_epsilon_bound(n_max: int) -> float:
    """Conservative bound ``1/(2 n_max + 1)`` from the untruncated curvature ``-(2n + 1)``."""
    return 1.0 / (2 * n_max + 1)


def annihilation(n_max: int) -> np.ndarray:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(complex)


def number_operator(n_max: int) -> HermitianOperator:
    return HermitianOperator(_frozen(np.diag(np.arange(n_max + 1, dtype=float))))


def displacement_hamiltonian(n_max: int) -> HermitianOperator:
    """``H = i(a^dag - a)``, so that ``exp(-iuH) = exp(u(a^dag - a))``."""
    a = annihilation(n_max)
    return HermitianOperator(_frozen(1j * (a.conj().T - a)))


def kraus_coefficients(n_max: int, theta: float, phi0: float) -> np.ndarray:
    x = phi0 + theta * np.arange(n_max + 1)
    return np.array([np.cos(x), np.sin(x)])


def photonbox_kraus(params: PhotonBoxParams) -> KrausSet:
    """Validated ``{M_g, M_e}`` pair.

    Raises:
        Assumption2Violation: two photon numbers share outcome statistics.
    """
    c = kraus_coefficients(params.n_max, params.theta, params.phi0)
    report = validate_kraus([np.diag(row) for row in c])
    if not report.ok:
        pairs = [v.pair for v in report.failed("distinguishability")]
        if pairs:
            raise Assumption2Violation(f"indistinguishable photon-number pairs: {pairs}")
        raise HypothesisViolation("; ".join(v.detail for v in report.violations))
    return report.kraus


def coherent_init(n_max: int, alpha: float) -> DensityMatrix:
    """Displaced vacuum computed with the same truncated propagator as the dynamics."""
    return apply_unitary(propagator(displacement_hamiltonian(n_max), alpha), basis_state(0, n_max + 1))


def poisson_populations(n_max: int, mean: float) -> np.ndarray:
    """Analytic photon-number law of an untruncated coherent state."""
    n = np.arange(n_max + 1)
    return np.exp(-mean + n * math.log(mean) - np.array([math.lgamma(k + 1) for k in n])) if mean > 0 else (n == 0).astype(float)


def photonbox_laplacian_oracle(n_max: int) -> np.ndarray:
    """Closed-form tri-diagonal Laplacian of the displacement Hamiltonian.

    Interior rows use ``R[n,n] = 4n + 2``, ``R[n-1,n] = -2n``,
    ``R[n+1,n] = -2n - 2``; the last two rows are evaluated directly from
    the truncated operator.
    """
    d = n_max + 1
    R = np.zeros((d, d))
    for n in range(d):
        R[n, n] = 4 * n + 2
        if n >= 1:
            R[n - 1, n] = -2 * n
        if n + 1 < d:
            R[n + 1, n] = -2 * n - 2
    direct = laplacian(displacement_hamiltonian(n_max))
    R[max(n_max - 1, 0):, :] = np.rint(direct[max(n_max - 1, 0):, :])
    return R


def photonbox_weights(params: PhotonBoxParams) -> LyapunovWeights:
    H = displacement_hamiltonian(params.n_max)
    R = laplacian(H)
    lam = gap_vector(params.lambda_gaps, params.target, params.dim)
    sigma = solve_sigma(R, lam, params.target)
    return LyapunovWeights(params.target, lam, sigma, params.epsilon, float(np.max(np.abs(R @ sigma + lam))))


def build_context(params: PhotonBoxParams | None = None) -> ClosedLoopContext:
    params = params or PhotonBoxParams()
    H = displacement_hamiltonian(params.n_max)
    return ClosedLoopContext(
        photonbox_kraus(params),
        ControlModel(H, params.u_bound, params.mode),
        photonbox_weights(params),
    )


def initial_state(params: PhotonBoxParams | None = None) -> DensityMatrix:
    params = params or PhotonBoxParams()
    return coherent_init(params.n_max, params.alpha)
