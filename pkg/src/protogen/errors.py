class ProtogenError(Exception):
    pass


class ConfigurationError(ProtogenError, ValueError):
    """Unknown model spec, invalid config value, or missing required setting."""


class ModelLoadError(ProtogenError, RuntimeError):
    pass


class InputError(ProtogenError, ValueError):
    """Argument has the wrong shape, range, or provenance."""


class IngestionError(ProtogenError, RuntimeError):
    """A dataset or image set could not be read.

    ``failures`` lists ``(path, reason)`` pairs when the error aggregates
    several per-entry problems.
    """

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class UndefinedCorrelationError(ProtogenError, ValueError):
    """Rank correlation is undefined (too few values or a constant vector)."""
