"""Exception hierarchy shared across the toolkit."""


class DropforgeError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(DropforgeError):
    """Tensor shape incompatible with what a layer or network expects."""


class NonFiniteError(DropforgeError):
    """A NaN or Inf appeared in an activation, gradient, or metric."""


class ConfigError(DropforgeError):
    """Invalid configuration value or an operation requested in the wrong mode."""


class ModelFormatError(DropforgeError):
    """Malformed portable model file.  Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetError(DropforgeError):
    """Malformed or inconsistent dataset file."""
