"""Exception types shared across the pipeline."""


class PulseStreamError(Exception):
    """Base class for all pulsestream errors."""


class InvalidArgument(PulseStreamError):
    pass


class NotFound(PulseStreamError):
    pass


class AlreadyExists(PulseStreamError):
    pass


class Conflict(PulseStreamError):
    pass


class InvalidHandle(PulseStreamError):
    pass


class ParseError(PulseStreamError):
    """Malformed input bytes; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class SchemaError(PulseStreamError):
    pass


class FormatError(PulseStreamError):
    pass


class VersionMismatch(PulseStreamError):
    pass


class ScanError(PulseStreamError):
    """Corrupt segment encountered during a scan; carries the segment path."""

    def __init__(self, message: str, segment: str):
        super().__init__(message)
        self.segment = segment


class StoreIOError(PulseStreamError):
    pass


class TransportError(PulseStreamError):
    pass
