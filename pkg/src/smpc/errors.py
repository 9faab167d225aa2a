"""Exception types shared across the toolkit."""


class SmpcError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SmpcError):
    """Problem data violates one or more declared invariants.

    Carries the full list of violations so callers can report every
    problem at once instead of fixing them one by one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(SmpcError):
    """A problem file could not be parsed against the config schema."""


class SynthesisError(SmpcError):
    """Riccati/Lyapunov synthesis failed (system not stabilizable or ill-conditioned)."""


class TighteningInfeasibleError(SmpcError):
    """Constraint tightening removed the origin from a constraint set."""


class SingularCovarianceError(SmpcError):
    """A covariance that must be positive definite is singular."""


class SolverFailure(SmpcError):
    """The QP solver hit its iteration cap; treated as a hard failure."""


class InitialInfeasibleError(SmpcError):
    """x0 outside initially feasible region."""


class InternalConsistencyError(SmpcError):
    """A solution violated an internal invariant; indicates a solver bug."""
