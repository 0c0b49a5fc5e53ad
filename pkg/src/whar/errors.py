"""Exception types shared across the engine."""


class WharError(Exception):
    """Base class for all engine errors."""


class FormatError(WharError):
    """Malformed container bytes or file structure."""


class VersionError(WharError):
    """Container version not understood by this build."""


class CorruptionError(WharError):
    """Stored checksum does not match the payload."""


class ShapeError(WharError):
    """Array shapes inconsistent with the requested operation."""


class ConfigError(WharError):
    """Configuration violates a documented invariant."""


class DomainError(WharError):
    """Numeric input outside the mathematical domain of an operation."""


class StreamError(WharError):
    """Sample stream breaks ordering guarantees (non-monotone timestamps)."""


class RateError(WharError):
    """Sample stream rate deviates beyond tolerance from its nominal rate."""


class NotReadyError(WharError):
    """Operation requested before enough data has been buffered."""


class ParseError(WharError):
    """A session file row could not be parsed."""


class ValidationError(WharError):
    """Loaded data violates a semantic invariant (overlaps, bad references)."""
