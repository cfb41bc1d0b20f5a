"""Feedback stabilization of discrete-time quantum systems under QND measurement.

Submodules:
    core         density matrices, Hermitian generators, propagators
    measurement  QND Kraus sets, outcome statistics, collapse
    openloop     uncontrolled chain, martingales, convergence estimates
    lyapunov     coupling graph, Laplacian, Lyapunov weights
    feedback     the stabilizing controller and its diagnostics
    photonbox    cavity photon-number preset
    ensemble     seeded ensembles, artifacts and reports
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DEFAULT_TOLERANCES,
    DensityMatrix,
    HermitianOperator,
    Tolerances,
    UnitaryPropagator,
    apply_unitary,
    basis_state,
    bch_second_order,
    commutator,
    make_density,
    make_hermitian,
    maximally_mixed,
    populations,
    propagator,
)
from .measurement import KrausSet, collapse, outcome_probabilities, sample_outcome, validate_kraus  # noqa: E402
from .lyapunov import LyapunovWeights, W0, Weps, connectivity_graph, epsilon_max, laplacian, solve_sigma, synthesize  # noqa: E402
from .feedback import ClosedLoopContext, ControlModel, q1_q2_diagnostics, run_closed_trajectory  # noqa: E402
from .openloop import ConvergenceCriterion, Q_increment, TrajectoryRecord, run_open_trajectory, sublyapunov_V  # noqa: E402
