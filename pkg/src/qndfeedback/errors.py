"""Exception hierarchy shared by all modules."""


class QNDError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(QNDError, ValueError):
    pass


class InvalidState(QNDError, ValueError):
    """A matrix failed one of the density-operator invariants."""

    def __init__(self, invariant, magnitude, tol):
        self.invariant = invariant
        self.magnitude = float(magnitude)
        self.tol = float(tol)
        super().__init__(f"{invariant} violated: magnitude {self.magnitude:.3e} exceeds tolerance {self.tol:.1e}")


class NotHermitian(InvalidState):
    def __init__(self, magnitude, tol):
        super().__init__("hermiticity", magnitude, tol)


class NotUnitTrace(InvalidState):
    def __init__(self, magnitude, tol):
        super().__init__("unit trace", magnitude, tol)


class NotPositive(InvalidState):
    def __init__(self, magnitude, tol):
        super().__init__("positive semidefiniteness", magnitude, tol)


class EigenFailure(QNDError, RuntimeError):
    pass


class ZeroProbabilityOutcome(QNDError, ValueError):
    def __init__(self, outcome, probability):
        self.outcome = outcome
        self.probability = float(probability)
        super().__init__(f"outcome {outcome} has probability {self.probability:.3e}; collapse undefined")


class DisconnectedGraph(QNDError, ValueError):
    pass


class SingularSolve(QNDError, RuntimeError):
    pass


class UnconvergedTrajectories(QNDError, RuntimeError):
    def __init__(self, seeds):
        self.seeds = list(seeds)
        super().__init__(f"{len(self.seeds)} trajectories did not converge (seeds: {self.seeds[:10]}{'...' if len(self.seeds) > 10 else ''})")


class HypothesisViolation(QNDError, ValueError):
    """A modelling hypothesis required by the stabilization result does not hold."""


class Assumption2Violation(HypothesisViolation):
    pass


class ConfigError(QNDError, ValueError):
    pass
