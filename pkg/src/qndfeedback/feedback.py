"""Measurement-then-control feedback maximizing ``Weps`` over a bounded control.

Each step samples a measurement outcome, collapses the state, then applies
``U_u`` with ``u`` maximizing ``u -> Weps(U_u rho U_u^dag)`` on
``[-u_bound, u_bound]``. Two maximizers are available: ``"quadratic"``
maximizes the exact second-order Taylor expansion in ``u`` (cheap, the
default), ``"exact"`` scans a grid of exact propagators and refines with a
golden-section search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import DEFAULT_TOLERANCES, DensityMatrix, HermitianOperator, Tolerances, apply_unitary, populations, propagator
from .errors import DimensionMismatch
from .lyapunov import LyapunovWeights, Weps
from .measurement import KrausSet, MeasurementOutcome, collapse, outcome_probabilities, sample_outcome
from .openloop import ConvergenceCriterion, ConvergenceTracker, TrajectoryRecord

MODES = ("quadratic", "exact")

# Controller weights are snapped to this grid after removing the constant
# offset, so gauge-shifted weights give bit-identical controls.
_GAUGE_QUANTUM_EXP = 36

_TIE_RTOL = 1e-13

INV_PHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True, eq=False)
class ControlModel:
    hamiltonian: HermitianOperator
    u_bound: float = 0.1
    mode: str = "quadratic"
    grid_points: int = 33
    tol_u: float = 1e-6

    def __post_init__(self):
        if not (math.isfinite(self.u_bound) and self.u_bound > 0):
            raise ValueError("u_bound must be finite and positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.grid_points < 3:
            raise ValueError("grid_points must be >= 3")


@dataclass(frozen=True, eq=False)
class ClosedLoopContext:
    kraus: KrausSet
    control: ControlModel
    weights: LyapunovWeights
    tolerances: Tolerances = field(default=DEFAULT_TOLERANCES)

    def __post_init__(self):
        dims = {self.kraus.dim, self.control.hamiltonian.dim, self.weights.dim}
        if len(dims) != 1:
            raise DimensionMismatch(f"kraus/hamiltonian/weights dimensions disagree: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.kraus.dim

    @cached_property
    def control_sigma(self) -> np.ndarray:
        """Gauge-fixed weights used by the controller (``sigma[target] = 0``)."""
        s = self.weights.sigma - self.weights.sigma[self.weights.target]
        s = np.ldexp(np.rint(np.ldexp(s, _GAUGE_QUANTUM_EXP)), -_GAUGE_QUANTUM_EXP)
        s.setflags(write=False)
        return s

    def with_mode(self, mode: str) -> "ClosedLoopContext":
        c = self.control
        return ClosedLoopContext(self.kraus, ControlModel(c.hamiltonian, c.u_bound, mode, c.grid_points, c.tol_u), self.weights, self.tolerances)

    def with_weights(self, weights: LyapunovWeights) -> "ClosedLoopContext":
        return ClosedLoopContext(self.kraus, self.control, weights, self.tolerances)


def _weps_from_pops(sigma, eps, p):
    return p @ sigma + eps / 4 * np.sum(p * p, axis=-1)


def u_derivatives(ctx: ClosedLoopContext, rho) -> tuple[float, float]:
    """First and second ``u``-derivatives of ``Weps(U_u rho U_u^dag)`` at ``u = 0``.

    Populations along ``u`` are ``p + u a + u^2/2 b`` to second order with
    ``a = diag(-i[H, rho])`` and ``b = diag(-[H, [H, rho]])``.
    """
    h = ctx.control.hamiltonian.data
    r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    c1 = h @ r - r @ h
    c2 = h @ c1 - c1 @ h
    a = (-1j * np.diagonal(c1)).real
    b = -np.diagonal(c2).real
    p = np.diagonal(r).real
    sigma = ctx.control_sigma
    eps = ctx.weights.epsilon
    d1 = sigma @ a + eps / 2 * (p @ a)
    d2 = sigma @ b + eps / 2 * (a @ a + p @ b)
    return float(d1), float(d2)


def argmax_quadratic(D1: float, D2: float, W_at_zero: float, u_bound: float) -> float:
    """Maximizer of ``W_at_zero + D1 u + D2 u^2 / 2`` on ``[-u_bound, u_bound]``.

    A flat or convex parabola without slope goes to ``+u_bound``.
    """
    if D2 < 0:
        return float(min(max(-D1 / D2, -u_bound), u_bound))
    return float(u_bound) if D1 >= 0 else -float(u_bound)


def golden_section_max(f, a: float, b: float, tol: float) -> tuple[float, float]:
    """Golden-section search for a maximum of ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


class _ExactLandscape:
    """Evaluates ``Weps(U_u rho U_u^dag)`` for many ``u`` using the eigenbasis of ``H``."""

    def __init__(self, ctx: ClosedLoopContext, rho):
        w, v = ctx.control.hamiltonian.eigh
        self.v = v
        self.x = v.conj().T @ np.asarray(rho.data if isinstance(rho, DensityMatrix) else rho) @ v
        self.gap = w[:, None] - w[None, :]
        self.sigma = ctx.control_sigma
        self.eps = ctx.weights.epsilon

    def populations(self, us) -> np.ndarray:
        us = np.atleast_1d(np.asarray(us, dtype=float))
        y = self.x[None] * np.exp(-1j * us[:, None, None] * self.gap[None])
        return np.einsum("nj,gjk,nk->gn", self.v, y, self.v.conj()).real

    def __call__(self, us) -> np.ndarray:
        return _weps_from_pops(self.sigma, self.eps, self.populations(us))


def argmax_exact(ctx: ClosedLoopContext, rho, tol_u: float | None = None) -> float:
    """Grid scan of the exact landscape followed by golden-section refinement."""
    ub = ctx.control.u_bound
    tol_u = ctx.control.tol_u if tol_u is None else tol_u
    f = _ExactLandscape(ctx, rho)
    grid = np.linspace(-ub, ub, ctx.control.grid_points)
    vals = f(grid)
    # ties (e.g. landscapes even in u) resolve to the largest u, matching the quadratic rule
    top = vals.max()
    i = int(np.flatnonzero(vals >= top - _TIE_RTOL * max(1.0, abs(top)))[-1])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    u, val = golden_section_max(lambda x: float(f(x)[0]), lo, hi, tol_u)
    if val >= vals[i]:
        return float(u)
    return float(grid[i])


def feedback(ctx: ClosedLoopContext, rho_half) -> float:
    if ctx.control.mode == "exact":
        return argmax_exact(ctx, rho_half)
    d1, d2 = u_derivatives(ctx, rho_half)
    return argmax_quadratic(d1, d2, 0.0, ctx.control.u_bound)


def step_closed(rho: DensityMatrix, ctx: ClosedLoopContext, rng: np.random.Generator) -> tuple[MeasurementOutcome, float, DensityMatrix]:
    out = sample_outcome(ctx.kraus, rho, rng)
    half = collapse(ctx.kraus, out.index, rho, ctx.tolerances)
    u = feedback(ctx, half)
    return out, u, apply_unitary(propagator(ctx.control.hamiltonian, u), half)


def controlled_value(ctx: ClosedLoopContext, rho_half: DensityMatrix) -> tuple[float, float]:
    """``(u, Weps(U_u rho_half))`` for the deployed controller."""
    u = feedback(ctx, rho_half)
    after = apply_unitary(propagator(ctx.control.hamiltonian, u), rho_half)
    return u, Weps(ctx.weights, after)


def q1_q2_diagnostics(rho: DensityMatrix, ctx: ClosedLoopContext) -> tuple[float, float]:
    """Measurement gain ``Q1`` and control gain ``Q2`` of ``Weps`` for one step.

    ``Q1 + Q2`` is the exact expected one-step increment of ``Weps`` under
    the deployed controller.
    """
    p = outcome_probabilities(ctx.kraus, rho)
    w_now = Weps(ctx.weights, rho)
    q1 = q2 = 0.0
    for mu in range(ctx.kraus.count):
        if p[mu] <= ctx.tolerances.p_floor:
            continue
        half = collapse(ctx.kraus, mu, rho, ctx.tolerances)
        w_half = Weps(ctx.weights, half)
        _, w_after = controlled_value(ctx, half)
        q1 += p[mu] * (w_half - w_now)
        q2 += p[mu] * (w_after - w_half)
    return float(q1), float(q2)


def expected_increment(rho: DensityMatrix, ctx: ClosedLoopContext) -> float:
    """``E[Weps(rho_next) | rho] - Weps(rho)`` by enumerating outcomes."""
    p = outcome_probabilities(ctx.kraus, rho)
    total = 0.0
    for mu in range(ctx.kraus.count):
        if p[mu] > ctx.tolerances.p_floor:
            _, w = controlled_value(ctx, collapse(ctx.kraus, mu, rho, ctx.tolerances))
            total += p[mu] * w
    return total - Weps(ctx.weights, rho)


def run_closed_trajectory(
    rho0: DensityMatrix,
    ctx: ClosedLoopContext,
    steps: int = 200,
    seed: int = 0,
    crit: ConvergenceCriterion | None = None,
    snapshot_every: int = 50,
    diagnostics: bool = False,
) -> TrajectoryRecord:
    """Simulate ``steps`` closed-loop steps; convergence is recorded but does not stop the run."""
    rng = np.random.default_rng(seed)
    tracker = ConvergenceTracker(crit or ConvergenceCriterion())
    rho = rho0
    pops = [populations(rho)]
    outcomes, controls = [], []
    snapshots = {0: rho0} if snapshot_every else {}
    diag = [_diag_row(rho, ctx)] if diagnostics else None
    tracker.update(0, pops[0])
    for step in range(1, steps + 1):
        out, u, rho = step_closed(rho, ctx, rng)
        outcomes.append(out.index)
        controls.append(u)
        pops.append(populations(rho))
        if snapshot_every and step % snapshot_every == 0:
            snapshots[step] = rho
        if diagnostics:
            diag.append(_diag_row(rho, ctx))
        tracker.update(step, pops[-1])
    return TrajectoryRecord(
        seed=seed,
        outcomes=np.array(outcomes, dtype=int),
        controls=np.array(controls, dtype=float),
        populations=np.array(pops),
        converged_to=tracker.converged_to,
        converged_at=tracker.converged_at,
        snapshots=snapshots,
        final_state=rho,
        diagnostics=np.array(diag) if diagnostics else None,
    )


def _diag_row(rho, ctx):
    q1, q2 = q1_q2_diagnostics(rho, ctx)
    return (q1, q2, Weps(ctx.weights, rho))
