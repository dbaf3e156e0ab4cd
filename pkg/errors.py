"""Exception hierarchy for the contention-resolution laboratory."""


class ContentionLabError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(ContentionLabError, ValueError):
    """An operation was called outside its precondition."""


class ConfigError(ContentionLabError):
    """An experiment config or environment setting is malformed."""


class SimulationError(ContentionLabError):
    """A run could not be carried out (horizon cap, adversary misuse)."""


class TraceFormatError(ContentionLabError):
    """A stored trace, schedule or stats file could not be parsed."""
