"""Exception types raised across the package."""


class Chr2CommError(Exception):
    """Base class for all package errors."""


class NegativeIntensity(Chr2CommError):
    """Light intensity must be nonnegative."""


class NegativeRate(Chr2CommError):
    """Rate coefficients must be nonnegative and finite."""


class InvalidStep(Chr2CommError):
    """Euler step size too large: a one-step probability left [0, 1]."""


class NonUniqueStationary(Chr2CommError):
    """The chain has several recurrent classes, so no unique stationary vector."""

    def __init__(self, message, recurrent_classes=()):
        super().__init__(message)
        self.recurrent_classes = tuple(tuple(c) for c in recurrent_classes)


class InvalidSingle(Chr2CommError):
    """Single-receptor matrix violates the transition-matrix invariants."""


class InfeasibleObservation(Chr2CommError):
    """Observation has zero likelihood under both hypotheses."""


class TableTooLarge(Chr2CommError):
    """Posterior table would exceed the enumeration guard."""


class EnumerationTooLarge(Chr2CommError):
    """Observation space too large for exact enumeration."""


class NoiseUnsupported(Chr2CommError):
    """Exact error probability is only defined with photon noise disabled."""


class ParseError(Chr2CommError):
    """Config file has a syntax problem; message names the offending line/key."""


class ValidationError(Chr2CommError):
    """Config or model invariant violated; message names the offending key."""
