"""Open-loop QND measurement chain (no control).

Provides the quantities used to analyse the uncontrolled chain: population
martingales, the quadratic sub-martingale ``V`` and its exact expected
increment, plus trajectory simulation and convergence-probability
estimation from ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_TOLERANCES, DensityMatrix, Tolerances, populations
from .errors import UnconvergedTrajectories
from .measurement import KrausSet, MeasurementOutcome, collapse, outcome_probabilities, sample_outcome


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Declare convergence once one population stays above ``population_threshold`` for ``patience`` steps."""

    population_threshold: float = 0.999
    patience: int = 10

    def __post_init__(self):
        if not 0.5 < self.population_threshold < 1:
            raise ValueError("population_threshold must lie in (0.5, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


class ConvergenceTracker:
    """Incremental streak counter implementing :class:`ConvergenceCriterion`."""

    def __init__(self, crit: ConvergenceCriterion):
        self.crit = crit
        self.candidate = None
        self.start = None
        self.streak = 0
        self.converged_to = None
        self.converged_at = None

    def update(self, step: int, pops: np.ndarray) -> bool:
        if self.converged_to is not None:
            return True
        n = int(np.argmax(pops))
        if pops[n] >= self.crit.population_threshold:
            if n == self.candidate:
                self.streak += 1
            else:
                self.candidate, self.start, self.streak = n, step, 1
        else:
            self.candidate, self.start, self.streak = None, None, 0
        if self.streak >= self.crit.patience:
            self.converged_to, self.converged_at = self.candidate, self.start
            return True
        return False


@dataclass
class TrajectoryRecord:
    """Per-step log of one trajectory.

    ``populations[k]`` is the diagonal of the state after ``k`` steps (row 0
    is the initial state); ``outcomes[k]`` and ``controls[k]`` are the
    measurement result and control applied during step ``k + 1``.
    """

    seed: int
    outcomes: np.ndarray
    controls: np.ndarray
    populations: np.ndarray
    converged_to: int | None = None
    converged_at: int | None = None
    snapshots: dict = field(default_factory=dict)
    final_state: DensityMatrix | None = None
    diagnostics: np.ndarray | None = None  # (steps + 1, 3): Q1, Q2, W_eps
    error: str | None = None

    @property
    def n_steps(self) -> int:
        return len(self.outcomes)

    def fidelity(self, target: int) -> np.ndarray:
        return self.populations[:, target]


def step_open(rho: DensityMatrix, k: KrausSet, rng: np.random.Generator) -> tuple[MeasurementOutcome, DensityMatrix]:
    out = sample_outcome(k, rho, rng)
    return out, collapse(k, out.index, rho)


def sublyapunov_V(rho) -> float:
    """Sum of squared populations over two."""
    p = populations(rho)
    return float(p @ p) / 2


def Q_increment(rho, k: KrausSet, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Exact one-step expected increase of :func:`sublyapunov_V` under measurement.

    Pairs of outcomes with ``p_mu * p_nu`` below ``p_floor**2`` contribute
    zero, which is the continuous extension of the formula.
    """
    pops = populations(rho)
    w = k.weights
    p = w @ pops
    num = w * pops  # (m, d): |c_{mu,n}|^2 <n|rho|n>
    pp = np.outer(p, p)
    ok = pp > tolerances.p_floor ** 2
    # p_mu p_nu (x_mu - x_nu)^2 == (num_mu p_nu - num_nu p_mu)^2 / (p_mu p_nu)
    diff = num[:, None, :] * p[None, :, None] - num[None, :, :] * p[:, None, None]
    terms = np.where(ok[:, :, None], diff ** 2 / np.where(ok, pp, 1.0)[:, :, None], 0.0)
    return float(terms.sum() / 4)


def martingale_residual(rho: DensityMatrix, k: KrausSet, n: int, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """``sum_mu p_mu <n|M_mu(rho)|n> - <n|rho|n>``; zero for complete QND sets."""
    p = outcome_probabilities(k, rho)
    total = 0.0
    for mu in range(k.count):
        if p[mu] > tolerances.p_floor:
            total += p[mu] * collapse(k, mu, rho).data[n, n].real
    return total - rho.data[n, n].real


def expected_after_measurement(rho: DensityMatrix, k: KrausSet, f, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """``E[f(M_mu(rho))]`` by exact enumeration of outcomes."""
    p = outcome_probabilities(k, rho)
    return float(sum(p[mu] * f(collapse(k, mu, rho)) for mu in range(k.count) if p[mu] > tolerances.p_floor))


def run_open_trajectory(
    rho0: DensityMatrix,
    k: KrausSet,
    max_steps: int = 500,
    crit: ConvergenceCriterion | None = None,
    seed: int = 0,
    stop_on_convergence: bool = True,
    snapshot_every: int = 50,
) -> TrajectoryRecord:
    """Simulate the uncontrolled chain from ``rho0`` for at most ``max_steps`` steps."""
    crit = crit or ConvergenceCriterion()
    rng = np.random.default_rng(seed)
    tracker = ConvergenceTracker(crit)
    rho = rho0
    pops = [populations(rho)]
    outcomes = []
    snapshots = {0: rho0} if snapshot_every else {}
    done = tracker.update(0, pops[0])
    for step in range(1, max_steps + 1):
        if done and stop_on_convergence:
            break
        out, rho = step_open(rho, k, rng)
        outcomes.append(out.index)
        pops.append(populations(rho))
        if snapshot_every and step % snapshot_every == 0:
            snapshots[step] = rho
        done = tracker.update(step, pops[-1])
    return TrajectoryRecord(
        seed=seed,
        outcomes=np.array(outcomes, dtype=int),
        controls=np.zeros(len(outcomes)),
        populations=np.array(pops),
        converged_to=tracker.converged_to,
        converged_at=tracker.converged_at,
        snapshots=snapshots,
        final_state=rho,
    )


@dataclass(frozen=True)
class ConvergenceEstimate:
    probabilities: np.ndarray
    standard_errors: np.ndarray
    counts: np.ndarray
    n_trajectories: int

    def within(self, expected, n_sigma: float = 3.0) -> np.ndarray:
        """Per-state test ``|p_hat - expected| <= n_sigma * SE``.

        When the empirical SE is zero the binomial SE of ``expected`` is used
        instead, so rare states with no hits are not automatically rejected.
        """
        expected = np.asarray(expected)
        se = np.where(self.standard_errors > 0, self.standard_errors, np.sqrt(expected * (1 - expected) / self.n_trajectories))
        return np.abs(self.probabilities - expected) <= n_sigma * se


def estimate_convergence_probs(records, dim: int | None = None) -> ConvergenceEstimate:
    """Empirical frequency of each limit state with binomial standard errors."""
    records = list(records)
    if not records:
        raise ValueError("empty ensemble")
    bad = [r.seed for r in records if r.converged_to is None]
    if bad:
        raise UnconvergedTrajectories(bad)
    d = dim or records[0].populations.shape[1]
    counts = np.bincount([r.converged_to for r in records], minlength=d).astype(float)
    N = len(records)
    p = counts / N
    return ConvergenceEstimate(p, np.sqrt(p * (1 - p) / N), counts, N)
