"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ResourceError(RuntimeError):
    """A computation would exceed its configured resource budget."""


class StateError(RuntimeError):
    """An object is not in a state that allows the requested operation."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss.

    ``batch_index`` identifies the offending step within the epoch.
    """

    def __init__(self, message, batch_index=None, epoch=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.epoch = epoch


class DivergenceError(TrainingError):
    """The loss kept growing far above its initial value."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class CheckpointError(IOError):
    """A checkpoint could not be read or is corrupt."""
