"""Exception and warning types shared across the package."""


class HessboundError(Exception):
    """Base class for every error raised by this package."""


class ConeViolation(HessboundError):
    """An eigenvalue vector lies outside the admissible cone."""


class SampleOutsideCone(HessboundError):
    """A sample passed to a structural check is not a cone point."""


class NotOnBoundary(HessboundError):
    """A point expected to lie on a boundary does not."""


class DegenerateNormal(HessboundError):
    """No valid supporting plane could be found."""


class FrameNotOrthonormal(HessboundError):
    """Frame vectors fail the orthonormality test."""


class NotHermitian(HessboundError):
    """A matrix is not Hermitian to the required tolerance."""


class NonpositiveEpsilon(HessboundError):
    """A localization radius is not strictly positive."""


class ThresholdNotMet(HessboundError):
    """The arrowhead corner entry is below the growth threshold."""


class SingularMetric(HessboundError):
    """The metric is not positive definite at the evaluation point."""


class VanishingGradient(HessboundError):
    """A level function has vanishing gradient."""


class TooCloseToCenter(HessboundError):
    """The boundary distance is not smooth at the requested point."""


class StencilOutOfDomain(HessboundError):
    """A stencil was requested at a node that is not interior."""


class LinearSolveDiverged(HessboundError):
    """An iterative linear solve failed to reach its tolerance."""


class LineSearchStalled(HessboundError):
    """Backtracking could not find an admissible step."""


class MaxIterations(HessboundError):
    """Newton iteration reached its cap without converging."""


class DegenerateRightHandSide(HessboundError):
    """The right-hand side touches the boundary value of the operator."""


class InadmissibleProfile(HessboundError):
    """A radial profile does not generate an admissible function."""


class NotASubsolution(HessboundError):
    """The supplied subsolution fails the subsolution inequality."""


class BoundaryMismatch(HessboundError):
    """Two fields that must agree on the boundary do not."""


class NoCrossing(HessboundError):
    """The tangential family never leaves the projected cone."""


class PreconditionViolation(HessboundError):
    """An operation precondition fails; the witness is attached."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NonpositiveDenominator(HessboundError):
    """A closed-form expression has a nonpositive denominator."""


class VanishingDenominator(HessboundError):
    """A linear coefficient would divide by (nearly) zero."""


class NotVanishingAtOrigin(HessboundError):
    """A field expected to vanish at the chart origin does not."""


class ZeroCrossingParameter(HessboundError):
    """The crossing parameter is zero where it is used as a divisor."""


class BarrierNotVerified(HessboundError):
    """The certificate was requested for an unverified barrier."""


class InvalidIngredients(HessboundError):
    """Inputs to a bound assembly are out of range."""


class ConfigInvalid(HessboundError):
    """An experiment configuration failed schema validation."""


class ExpressionError(HessboundError):
    """An expression string is outside the supported grammar."""


class ProbeExhausted(UserWarning):
    """A projected-cone probe stayed undecided up to the largest radius."""
