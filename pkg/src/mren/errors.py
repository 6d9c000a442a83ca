"""Exception types shared across the package."""


class MrenError(Exception):
    """Base class for all errors raised by mren."""


class ShapeError(MrenError, ValueError):
    """Tensor dimensions are incompatible for an operation."""


class ConfigError(MrenError, ValueError):
    """Invalid model, training or variant configuration."""


class UsageError(MrenError, RuntimeError):
    """API misuse, e.g. backward through an untraced tensor."""


class InputError(MrenError, ValueError):
    """Input data unusable for the requested computation."""


class DecodeError(MrenError, OSError):
    """An image file could not be decoded."""


class CheckpointError(MrenError, OSError):
    """Base class for checkpoint read failures."""


class IncompatibleCheckpointError(CheckpointError):
    """Wrong magic, format version or tensor precision."""


class IntegrityError(CheckpointError):
    """Checkpoint is truncated or its payload is corrupted."""


class NonFiniteLossError(MrenError, ArithmeticError):
    """Training produced a NaN or infinite loss."""
