"""Exception types shared across the toolkit."""


class AnoncodecError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AnoncodecError):
    """Invalid configuration value or malformed config file."""


class DegenerateInputError(AnoncodecError, ValueError):
    """Input is mathematically degenerate for the requested operation
    (zero vector where a direction is needed, constant sequence for a
    correlation, empty batch for a mean)."""


class DataFormatError(AnoncodecError):
    """Malformed binary or JSON artifact.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(AnoncodecError):
    """Codebook training produced a non-finite loss."""
