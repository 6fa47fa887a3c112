"""Exception types shared across the package."""


class AlphaError(Exception):
    """Base class for all errors raised by kalpha."""


class PreconditionError(AlphaError, ValueError):
    """An input violates a documented precondition of an operation."""


class DegenerateDataError(AlphaError, ValueError):
    """The data carry no information for the requested quantity.

    Raised e.g. when every score is identical, so that the total mean square
    is zero and agreement is undefined.
    """


class DataFormatError(AlphaError, ValueError):
    """A data file could not be parsed into a score matrix."""
