"""Exception types shared across the package."""


class MpcCertError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MpcCertError):
    """Problem file is malformed or violates the JSON schema."""


class DimensionError(MpcCertError):
    """Matrix or vector dimensions are inconsistent."""


class IndefinitenessError(MpcCertError):
    """A weight matrix fails its required definiteness (R must be PD)."""


class SingularityError(MpcCertError):
    """A linear solve hit a numerically singular system."""


class NoConvergenceError(MpcCertError):
    """An iteration failed to converge within its limit."""


class EmptyPolytopeError(MpcCertError):
    """A polytope required to be nonempty has no feasible point."""


class MaxIterationsError(MpcCertError):
    """An iterative solver tripped its anti-cycling iteration guard."""


class InfeasibleAtStateError(MpcCertError):
    """The controller QP is infeasible at the requested state."""


class TooFewFeasibleError(MpcCertError):
    """Rejection sampling accepted fewer than 1 in 1000 candidates."""
