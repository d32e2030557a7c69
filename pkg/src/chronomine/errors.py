"""Exception types shared across the package."""


class ChronomineError(Exception):
    """Base class for all package-specific errors."""


class DatasetFormatError(ChronomineError, ValueError):
    """A dataset or artifact file violates its documented format."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownEndpointError(ChronomineError, ValueError):
    """A temporal comparison touched an interval endpoint that is unknown.

    Callers decide the policy: walks skip the fact, the catch-all edge
    relation admits it, density evaluation drops the grounding.
    """


class InsufficientSamplesError(ChronomineError, ValueError):
    """Too few gap samples to fit a density component."""


class DependencyError(ChronomineError):
    """A pipeline stage is missing an upstream artifact or its hash mismatches."""


class ConfigError(ChronomineError, ValueError):
    """A run configuration file or override is malformed or unknown."""
