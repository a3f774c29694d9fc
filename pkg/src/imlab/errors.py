"""Exception types shared across the toolkit.

Validation errors signal bad inputs (CLI exit code 2); resource guards
signal computations that would exhaust memory or time (exit code 3).
"""


class ImLabError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ImLabError):
    """Input fails a precondition or invariant check."""


class ResourceGuard(ImLabError):
    """Computation refused because it would exceed a resource cap."""


class NonUnitary(ValidationError):
    def __init__(self, index, residual):
        self.index = index
        self.residual = residual
        super().__init__(
            f"matrix {index} is not unitary (max residual {residual:.3e})"
        )


class DimensionMismatch(ValidationError):
    pass


class UnsupportedDimension(ValidationError):
    pass


class NotADensityMatrix(ValidationError):
    pass


class NonTracePreserving(ValidationError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(
            f"Kraus set violates trace preservation (max residual {residual:.3e})"
        )


class DeltaOutOfRange(ValidationError):
    pass


class POutOfRange(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class TooFewLevels(ValidationError):
    pass


class OddL(ValidationError):
    pass


class BadDims(ValidationError):
    pass


class NonUniformAlpha(ValidationError):
    pass


class AllZeroWeights(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class DegenerateNorm(ValidationError):
    pass


class InconsistentReachableSets(ValidationError):
    pass


class NonConvergentSteadyState(ImLabError):
    pass


class ExplosionGuard(ResourceGuard):
    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(
            f"reachable set exceeded the element cap ({count} > {cap})"
        )


class TooLarge(ResourceGuard):
    pass
