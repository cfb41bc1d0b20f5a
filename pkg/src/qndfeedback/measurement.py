"""QND Kraus measurements: validation, outcome statistics, collapse, sampling.

Operators are diagonal in the computational basis, so a measurement is
fully described by the coefficient table ``c[mu, n]`` and all probability
computations are O(m d).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .core import DEFAULT_TOLERANCES, DensityMatrix, Tolerances, _frozen, _repair, populations
from .errors import DimensionMismatch, ZeroProbabilityOutcome


@dataclass(frozen=True, eq=False)
class KrausSet:
    """Validated QND measurement: ``M_mu = sum_n c[mu, n] |n><n|``."""

    operators: np.ndarray  # (m, d, d)
    coefficients: np.ndarray  # (m, d)

    @property
    def count(self) -> int:
        return self.coefficients.shape[0]

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """``|c[mu, n]|^2``, the outcome likelihoods for each basis state."""
        return np.abs(self.coefficients) ** 2

    @classmethod
    def from_coefficients(cls, coefficients) -> "KrausSet":
        """Build without validation, e.g. for deliberately broken test sets."""
        c = np.atleast_2d(np.asarray(coefficients, dtype=complex))
        ops = np.stack([np.diag(row) for row in c])
        return cls(_frozen(ops), _frozen(c))


@dataclass(frozen=True)
class Violation:
    assumption: str
    detail: str
    pair: tuple[int, int] | None = None
    outcome: int | None = None


@dataclass
class KrausReport:
    """Outcome of :func:`validate_kraus`; ``kraus`` is set only when every check passed."""

    kraus: KrausSet | None
    violations: list[Violation] = field(default_factory=list)
    completeness_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def failed(self, assumption: str) -> list[Violation]:
        return [v for v in self.violations if v.assumption == assumption]


@dataclass(frozen=True)
class MeasurementOutcome:
    index: int
    probability: float


def validate_kraus(ops, tol: float | None = None, tolerances: Tolerances = DEFAULT_TOLERANCES) -> KrausReport:
    """Check completeness, QND diagonality and pairwise distinguishability.

    Args:
        ops: sequence of ``m`` square matrices of equal size.
        tol: separation threshold for distinguishability of basis pairs;
            defaults to ``tolerances.separation``.

    Returns:
        A :class:`KrausReport` listing every violated assumption. No
        exception is raised for invalid sets.
    """
    sep = tolerances.separation if tol is None else tol
    mats = [np.asarray(m, dtype=complex) for m in ops]
    if not mats:
        return KrausReport(None, [Violation("shape", "empty operator list")])
    d = mats[0].shape[0]
    for i, m in enumerate(mats):
        if m.ndim != 2 or m.shape != (d, d):
            return KrausReport(None, [Violation("shape", f"operator {i} has shape {m.shape}, expected {(d, d)}", outcome=i)])
    stack = np.stack(mats)
    violations = []

    gram = np.einsum("mji,mjk->ik", stack.conj(), stack)
    resid = float(np.max(np.abs(gram - np.eye(d))))
    if resid > tolerances.completeness:
        violations.append(Violation("completeness", f"max |sum M^dag M - I| = {resid:.3e}"))

    off = stack.copy()
    idx = np.arange(d)
    off[:, idx, idx] = 0
    for mu in range(len(mats)):
        worst = float(np.max(np.abs(off[mu]))) if d > 1 else 0.0
        if worst > tolerances.diagonal:
            violations.append(Violation("diagonality", f"operator {mu} has off-diagonal magnitude {worst:.3e}", outcome=mu))

    coeffs = np.stack([np.diagonal(m) for m in mats])
    w = np.abs(coeffs) ** 2
    col = np.abs(w.sum(axis=0) - 1.0)
    for n in np.flatnonzero(col > tolerances.column_norm):
        violations.append(Violation("column_normalization", f"sum_mu |c[mu,{n}]|^2 deviates by {col[n]:.3e}"))

    for n1, n2 in combinations(range(d), 2):
        if np.max(np.abs(w[:, n1] - w[:, n2])) <= sep:
            violations.append(Violation("distinguishability", f"basis states {n1} and {n2} give identical outcome statistics", pair=(n1, n2)))

    kraus = None if violations else KrausSet(_frozen(stack), _frozen(coeffs))
    return KrausReport(kraus, violations, resid)


def load_kraus_json(path) -> KrausReport:
    """Load ``{"dim": d, "operators": [[[re, im], ...], ...]}`` and validate it."""
    doc = json.loads(Path(path).read_text())
    d = int(doc["dim"])
    ops = [parse_complex_matrix(op, d) for op in doc["operators"]]
    return validate_kraus(ops)


def parse_complex_matrix(rows, dim: int | None = None) -> np.ndarray:
    """Parse nested lists whose leaves are numbers or ``[re, im]`` pairs."""
    out = []
    for row in rows:
        vals = []
        for x in row:
            if isinstance(x, (list, tuple)):
                vals.append(complex(float(x[0]), float(x[1])))
            else:
                vals.append(complex(x))
        out.append(vals)
    a = np.array(out, dtype=complex)
    if dim is not None and a.shape != (dim, dim):
        raise DimensionMismatch(f"expected {dim}x{dim} matrix, got {a.shape}")
    return a


def dump_complex_matrix(a) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def _check_dims(k: KrausSet, rho: DensityMatrix):
    if k.dim != rho.data.shape[0]:
        raise DimensionMismatch(f"Kraus set dimension {k.dim} vs state dimension {rho.data.shape[0]}")


def outcome_probabilities(k: KrausSet, rho: DensityMatrix) -> np.ndarray:
    _check_dims(k, rho)
    p = k.weights @ populations(rho)
    return np.clip(p, 0.0, None)


def collapse(k: KrausSet, mu: int, rho: DensityMatrix, tolerances: Tolerances = DEFAULT_TOLERANCES) -> DensityMatrix:
    """Post-measurement state for outcome ``mu``."""
    _check_dims(k, rho)
    c = k.coefficients[mu]
    p = float(np.abs(c) ** 2 @ populations(rho))
    if p <= tolerances.p_floor:
        raise ZeroProbabilityOutcome(mu, p)
    r = np.outer(c, c.conj()) * rho.data
    return _repair(r / p, tolerances)


def collapse_populations(k: KrausSet, mu: int, pops: np.ndarray) -> np.ndarray:
    """Populations after outcome ``mu``; only the diagonal is needed for QND sets."""
    w = k.weights[mu] * pops
    return w / w.sum()


def sample_outcome(k: KrausSet, rho: DensityMatrix, rng: np.random.Generator) -> MeasurementOutcome:
    """Draw an outcome by inverse CDF; zero-probability outcomes are never returned."""
    p = outcome_probabilities(k, rho)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    r = rng.random()
    idx = int(np.searchsorted(cdf, r, side="right"))
    last = int(np.flatnonzero(p > 0)[-1])
    idx = min(idx, last)
    return MeasurementOutcome(idx, float(p[idx]))
