"""Dense matrix primitives for density operators and unitary propagation.

States are immutable :class:`DensityMatrix` values. Every operation that
produces a state re-Hermitizes, renormalizes the trace and checks
positivity so that round-off does not accumulate over long trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DimensionMismatch,
    EigenFailure,
    NotHermitian,
    NotPositive,
    NotUnitTrace,
)


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds used by every invariant check."""

    hermitian: float = 1e-10
    trace: float = 1e-10
    psd: float = 1e-9
    unitary: float = 1e-10
    operator_hermitian: float = 1e-12
    completeness: float = 1e-10
    diagonal: float = 1e-12
    column_norm: float = 1e-10
    separation: float = 1e-9
    p_floor: float = 1e-12
    laplacian_residual: float = 1e-10
    edge: float = 1e-12
    population_sum: float = 1e-9


DEFAULT_TOLERANCES = Tolerances()


def _frozen(a):
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def _as_array(m):
    if isinstance(m, (DensityMatrix, HermitianOperator, UnitaryPropagator)):
        return m.data
    return np.asarray(m)


def _check_square(a, name="matrix"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")


def _check_same_dim(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated quantum state: Hermitian, unit trace, positive semidefinite.

    Build through :func:`make_density`; the constructor itself does not
    validate.
    """

    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def populations(self) -> np.ndarray:
        return populations(self)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Hermitian generator with a lazily cached eigendecomposition."""

    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @cached_property
    def eigh(self):
        try:
            w, v = np.linalg.eigh(self.data)
        except np.linalg.LinAlgError as exc:
            raise EigenFailure(str(exc)) from exc
        w.setflags(write=False)
        v.setflags(write=False)
        return w, v

    @cached_property
    def squared(self) -> np.ndarray:
        h2 = self.data @ self.data
        h2.setflags(write=False)
        return h2


@dataclass(frozen=True, eq=False)
class UnitaryPropagator:
    data: np.ndarray
    control_value: float = field(default=0.0)

    @property
    def dim(self) -> int:
        return self.data.shape[0]


def make_hermitian(entries, tol: Tolerances = DEFAULT_TOLERANCES) -> HermitianOperator:
    a = np.asarray(entries, dtype=complex)
    _check_square(a, "Hermitian operator")
    err = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if err > tol.operator_hermitian:
        raise NotHermitian(err, tol.operator_hermitian)
    return HermitianOperator(_frozen((a + a.conj().T) / 2))


def make_density(entries, tol: Tolerances = DEFAULT_TOLERANCES) -> DensityMatrix:
    """Validate ``entries`` as a density matrix and return a repaired copy.

    Violations larger than the tolerances raise; smaller drift is removed by
    symmetrizing and renormalizing the trace.
    """
    a = np.asarray(_as_array(entries), dtype=complex)
    _check_square(a, "density matrix")
    herm_err = np.max(np.abs(a - a.conj().T))
    if herm_err > tol.hermitian:
        raise NotHermitian(herm_err, tol.hermitian)
    tr = np.trace(a).real
    if abs(tr - 1.0) > tol.trace:
        raise NotUnitTrace(abs(tr - 1.0), tol.trace)
    return _repair(a, tol)


def _repair(a, tol: Tolerances = DEFAULT_TOLERANCES) -> DensityMatrix:
    a = (a + a.conj().T) / 2
    a = a / np.trace(a).real
    lo = np.linalg.eigvalsh(a)[0]
    if lo < -tol.psd:
        raise NotPositive(-lo, tol.psd)
    return DensityMatrix(_frozen(a))


def basis_state(n: int, dim: int) -> DensityMatrix:
    """Projector |n><n| in dimension ``dim``."""
    a = np.zeros((dim, dim), dtype=complex)
    a[n, n] = 1.0
    return DensityMatrix(_frozen(a))


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(_frozen(np.eye(dim) / dim))


def pure_state(psi) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return make_density(np.outer(psi, psi.conj()))


def propagator(H: HermitianOperator, u: float) -> UnitaryPropagator:
    """Return ``exp(-i u H)`` from the cached eigendecomposition of ``H``."""
    w, v = H.eigh
    U = (v * np.exp(-1j * u * w)) @ v.conj().T
    return UnitaryPropagator(_frozen(U), float(u))


def apply_unitary(U: UnitaryPropagator, rho: DensityMatrix) -> DensityMatrix:
    Ua = _as_array(U)
    r = _as_array(rho)
    _check_same_dim(Ua, r)
    return _repair(Ua @ r @ Ua.conj().T)


def commutator(A, B) -> np.ndarray:
    A = _as_array(A)
    B = _as_array(B)
    _check_same_dim(A, B)
    return A @ B - B @ A


def bch_second_order(rho, H, u: float) -> np.ndarray:
    """Second-order expansion ``rho - iu[H,rho] - u^2/2 [H,[H,rho]]`` of the conjugation.

    The result is generally not a valid state; it is meant for scalar
    evaluations only.
    """
    r = _as_array(rho)
    h = _as_array(H)
    c1 = commutator(h, r)
    c2 = commutator(h, c1)
    return r - 1j * u * c1 - 0.5 * u * u * c2


def populations(rho) -> np.ndarray:
    """Diagonal ``<n|rho|n>`` as a real vector."""
    return np.diagonal(_as_array(rho)).real.copy()


def trace_distance(rho, sigma) -> float:
    diff = _as_array(rho) - _as_array(sigma)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))
