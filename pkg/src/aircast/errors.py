"""Exception taxonomy shared across the package.

Every failure mode raised on purpose derives from AircastError so the CLI can
map library errors to a single exit code.
"""


class AircastError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AircastError):
    """Operand or array shapes do not line up."""


class ContractError(AircastError):
    """A documented precondition was violated by the caller."""


class NumericError(AircastError):
    """Non-finite values, failed convergence, or exhausted step budgets."""


class ConfigurationError(AircastError):
    """Invalid or incomplete configuration (fields, splits, unset state)."""


class DataError(AircastError):
    """Input data cannot support the requested operation."""


class ParseError(DataError):
    """Malformed input file; message carries the offending line when known."""


class UnknownStationError(DataError):
    """A record references a station id absent from the station table."""


class FormatError(DataError):
    """A persisted container is corrupt or has an unrecognized layout."""


class DegenerateGraphError(DataError):
    """Station geometry does not admit a usable graph (duplicate coordinates)."""
