"""Exception hierarchy shared by every module."""


class StemGNNError(Exception):
    """Base class for all library errors."""


class DimensionError(StemGNNError, ValueError):
    """Operand shapes do not agree."""


class ConfigurationError(StemGNNError, ValueError):
    """An option or combination of options is invalid."""


class DomainError(StemGNNError, ValueError):
    """Input lies outside the domain an operation accepts."""


class NumericError(StemGNNError, ArithmeticError):
    """Non-finite values, divergence or non-convergence."""


class DataError(StemGNNError, ValueError):
    """A dataset file is malformed or too small."""


class IntegrityError(DataError):
    """A persisted file failed its checksum or structural checks."""
