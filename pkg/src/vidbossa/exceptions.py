class VidBossaError(Exception):
    """Base class for errors raised by this package."""


class FormatError(VidBossaError, ValueError):
    """A file does not conform to its binary or text format."""


class TruncatedFileError(FormatError):
    """A binary file ended before its declared payload."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigurationError(VidBossaError, ValueError):
    """Invalid parameter values or combinations."""


class ContractViolation(VidBossaError, ValueError):
    """A precondition on inputs (shape, bounds, dimension match) was broken."""


class ProtocolError(VidBossaError):
    """Evaluation protocol violation, e.g. a fold whose training set has one class."""
