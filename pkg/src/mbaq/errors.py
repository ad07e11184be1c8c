"""Exception types shared across the package."""


class MbaqError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(MbaqError, ValueError):
    """An operation received data that violates its contract."""


class InvalidConfigError(MbaqError, ValueError):
    """A configuration value is outside its allowed range."""


class PlacementError(MbaqError, RuntimeError):
    """Scene objects could not be placed without overlap."""


class ParseError(MbaqError, ValueError):
    """An on-disk artifact could not be parsed."""


class TrainingError(MbaqError, RuntimeError):
    """Training diverged or could not run; carries the per-epoch log."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = list(log) if log else []
