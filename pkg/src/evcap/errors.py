"""Exception hierarchy shared by every evcap module."""


class EvcapError(Exception):
    """Base class for all errors raised by evcap."""


class InvalidArgument(EvcapError, ValueError):
    """An argument has the wrong shape, range or type."""


class InvalidState(EvcapError, RuntimeError):
    """An object is used in a state that does not allow the operation."""


class ValidationError(EvcapError, ValueError):
    """Input data violates a documented contract (manifests, reports, configs)."""

    def __init__(self, message, offenders=None):
        super().__init__(message)
        self.offenders = list(offenders or [])


class FormatError(EvcapError, ValueError):
    """A binary or text file does not follow its documented layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(EvcapError, ArithmeticError):
    """A computation produced non-finite values or failed a numeric check."""
