"""Exception types raised by the simulator and trainer."""


class FluxSwarmError(Exception):
    """Base class for all package errors."""


class StabilityViolation(FluxSwarmError, ValueError):
    """Explicit diffusion number above the stability bound."""


class SolverDivergence(FluxSwarmError, RuntimeError):
    """The pressure solve did not reach its residual tolerance."""


class FieldBlowup(FluxSwarmError, RuntimeError):
    """Velocity field became non-finite or exceeded the blowup speed."""


class CourantViolation(FieldBlowup):
    """Courant number exceeded the configured hard limit."""


class NonFiniteGradient(FluxSwarmError, FloatingPointError):
    """A training gradient contained NaN or inf."""


class ParseError(FluxSwarmError, ValueError):
    """Configuration file could not be parsed."""


class ValidationError(FluxSwarmError, ValueError):
    """Configuration parsed but violates an invariant."""
