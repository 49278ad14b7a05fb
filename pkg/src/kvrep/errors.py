"""Exception hierarchy shared across the package.

Every error raised on purpose derives from KvrepError so callers (and the
CLI) can map failure classes to exit codes without string matching.
"""


class KvrepError(Exception):
    """Base class for all package errors."""


class ConfigError(KvrepError):
    """A configuration object or spec string is structurally invalid."""


class DomainError(KvrepError):
    """An input value is outside the domain an operation accepts."""


class CapacityError(KvrepError):
    """A sequence or cache would exceed its preallocated capacity."""


class DegenerateInputError(KvrepError):
    """Input is well-formed but carries no usable signal (e.g. one-class labels)."""


class UsageError(KvrepError):
    """An operation was invoked in a way its mode/contract forbids."""


class TrajectoryTooShortError(DomainError):
    """A trajectory has fewer than two points, so no step deltas exist."""


class TraceFormatError(KvrepError):
    """A serialized trace violates the container format."""


class BadMagicError(TraceFormatError):
    """The file does not start with the container magic."""


class UnsupportedVersionError(TraceFormatError):
    """The container version is newer than this reader understands."""


class TruncatedTraceError(TraceFormatError):
    """A tensor's declared extent runs past the end of the payload."""


class OverlappingTensorsError(TraceFormatError):
    """Two tensor payload ranges overlap or are out of order."""
