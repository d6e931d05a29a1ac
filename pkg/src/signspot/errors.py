"""Exception types shared across the package."""


class SignspotError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(SignspotError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(SignspotError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DegenerateBatchError(SignspotError, ValueError):
    """A batch (or reduction group) is too small to be meaningful."""


class InvalidMaskError(SignspotError, ValueError):
    """An attention mask leaves some row with no attendable position."""


class ContractError(SignspotError, ValueError):
    """A caller broke an API precondition (wrong rank, empty segment, ...)."""


class EvaluationError(SignspotError, ArithmeticError):
    """A numeric evaluation produced non-finite values."""


class PoseParseError(SignspotError, ValueError):
    """A pose or manifest file line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PoseSchemaError(PoseParseError):
    """A parsed record violates the pose-sequence schema."""


class GenerationError(SignspotError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class CheckpointError(SignspotError, ValueError):
    """A checkpoint file is unreadable or inconsistent with the config."""


class VerificationError(SignspotError, RuntimeError):
    """An invariant check failed."""
