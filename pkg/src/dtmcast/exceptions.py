"""Exception types raised across the package."""


class DTMError(Exception):
    """Base class for all package errors."""


class NonMonotonicTimestamp(DTMError, ValueError):
    pass


class UnknownAttribute(DTMError, KeyError):
    pass


class EmptyTrack(DTMError, ValueError):
    pass


class IoFailure(DTMError, OSError):
    pass


class FormatVersionMismatch(DTMError, ValueError):
    pass


class ShapeMismatch(DTMError, ValueError):
    pass


class EmptyDataset(DTMError, ValueError):
    pass


class DivergedLoss(DTMError, FloatingPointError):
    """Training produced a non-finite loss; usually the learning rate is too high."""


class TooFewUsers(DTMError, ValueError):
    pass


class BadK(DTMError, ValueError):
    pass


class EmptyBatch(DTMError, ValueError):
    pass


class InvalidRecord(DTMError, ValueError):
    pass


class EmptyCatalog(DTMError, ValueError):
    pass


class EmptyGroup(DTMError, ValueError):
    pass


class EmptyPlaylist(DTMError, ValueError):
    pass


class UnknownRepresentation(DTMError, ValueError):
    pass


class ParseError(DTMError, ValueError):
    def __init__(self, message, line=None, key=None):
        super().__init__(message)
        self.line = line
        self.key = key


class ValidationError(DTMError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
