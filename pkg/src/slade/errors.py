"""Exception types shared across the package."""


class SladeError(Exception):
    """Base class for all package errors."""


class DimensionError(SladeError):
    """Operands have incompatible or unsupported shapes."""


class StreamError(SladeError):
    """An edge stream violates its ordering or id invariants."""


class GradCheckError(SladeError):
    """Gradient check could not run or produced a non-finite value."""


class TrainingError(SladeError):
    """Training step failed (e.g. non-finite gradient)."""


class ParseError(SladeError):
    """An input file is malformed. Message carries the line number."""


class FormatError(SladeError):
    """A binary container is corrupt, truncated, or has the wrong version."""


class InjectionError(SladeError):
    """Anomaly injection cannot satisfy its preconditions."""


class ConfigError(SladeError):
    """A configuration file or value is invalid."""


class MetricError(SladeError):
    """A metric's preconditions are not met (e.g. single-class labels)."""
