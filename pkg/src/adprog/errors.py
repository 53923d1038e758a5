"""Exception types shared across the package."""


class AdprogError(Exception):
    """Base class for all package errors."""


class DimensionError(AdprogError, ValueError):
    """Operand shapes do not conform."""


class ConfigurationError(AdprogError, ValueError):
    """A configuration value is out of its legal range."""


class InputError(AdprogError, ValueError):
    """Runtime input data violates a precondition."""


class SchemaError(AdprogError, ValueError):
    """A data file does not match its documented schema."""


class GradCheckError(AdprogError, RuntimeError):
    """The finite-difference oracle could not be evaluated."""


class TrainingError(AdprogError, RuntimeError):
    """Training aborted (divergence, non-finite gradients, ...)."""
