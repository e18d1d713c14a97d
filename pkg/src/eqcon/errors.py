"""Exception hierarchy for eqcon.

Validation failures (bad shapes, infeasible inputs, malformed configs) and
numeric failures (ill-conditioned systems, diverging solvers) are kept in
separate branches so the CLI can map them to distinct exit codes.
"""


class EqconError(Exception):
    """Base class for all eqcon errors."""


class ValidationError(EqconError):
    """Bad input: shapes, domains, or file contents."""


class DimensionMismatch(ValidationError):
    """Array shapes are inconsistent with each other or with the system."""


class NonFiniteInput(ValidationError):
    """An input contains NaN or Inf entries."""


class RankDeficient(ValidationError):
    """Constraint matrix has linearly dependent rows."""


class ProbabilityUnderflow(ValidationError):
    """A normalized probability is too small to represent in float64."""


class OutOfSupport(ValidationError):
    """Query point lies outside the support of the distribution."""


class InfeasibleTarget(ValidationError):
    """Target vector does not satisfy the constraint system."""


class DegenerateMarginal(ValidationError):
    """Coordinate is fully determined by the constraint; its marginal is a
    point mass and has no density."""


class ZeroVector(ValidationError):
    """Cosine distance is undefined for zero-norm vectors."""


class ConfigError(ValidationError):
    """Malformed or unknown fields in a CLI configuration file."""


class NumericFailure(EqconError):
    """Computation could not be carried out at acceptable accuracy."""


class IllConditioned(NumericFailure):
    """Condition number of the constraint/covariance interaction exceeds the
    trust threshold."""


class LpFailure(NumericFailure):
    """Linear-program solve for the L1 projection did not converge."""


class NonFiniteLoss(NumericFailure):
    """Training loss became NaN or Inf (typically a too-large step size)."""
