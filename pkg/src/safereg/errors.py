"""Exception types raised by the validation and numerical layers."""


class SafeRegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SafeRegError):
    """A model or configuration failed a structural check."""


class SpectrumOffAxis(ValidationError):
    """Signal-model matrix has eigenvalues off the imaginary axis."""


class NotObservable(ValidationError):
    """An observability rank test failed."""


class Defective(ValidationError):
    """A matrix is too close to non-diagonalizable for eigenbasis methods."""


class BadCompanionForm(ValidationError):
    """ODE system matrix is not in the required companion-like form."""


class NonpositiveGain(ValidationError):
    """Input gain b must be strictly positive."""


class NonpositiveSpeed(ValidationError):
    """Transport speeds must be strictly positive."""


class DomainError(SafeRegError):
    """Barrier slope vanished where the control law needs to divide by it."""


class ZeroBarrier(SafeRegError):
    """A barrier value is exactly zero where a gain threshold needs its sign."""


class QuadratureFailure(SafeRegError):
    """Adaptive quadrature could not reach tolerance within max subdivisions."""


class NotHurwitz(SafeRegError):
    """A matrix required to be Hurwitz has eigenvalues with Re >= 0."""

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class FixedPointDiverged(SafeRegError):
    """Successive-approximation iteration failed to contract."""


class CflViolation(ValidationError):
    """Explicit upwind stability condition speed*dt/dx < 1 violated."""


class NonFinite(SafeRegError):
    """Simulation state left the finite range (divergence detector)."""


class OutOfHorizon(SafeRegError):
    """Prediction horizon exceeds the transport delay 1/q2."""


class Unresolved(SafeRegError):
    """Trajectory never settles into the safe region; no rescue time exists."""


class ConfigError(SafeRegError):
    """Scenario configuration is malformed."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ParseError(ConfigError):
    """Configuration file could not be parsed at all."""


class SchemaError(ConfigError):
    """Configuration is missing required fields or has wrong shapes."""
