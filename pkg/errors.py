"""
Exception hierarchy for catenc.

Every error raised on purpose by the library derives from CatencError and
carries the process exit code the CLI should return for it.
"""


class CatencError(Exception):
    """Base class for all library errors"""

    exit_code = 1


# exit code 1: invalid input or configuration


class ValidationError(CatencError):
    exit_code = 1


class SchemaError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class BoundsError(ValidationError):
    pass


class UnsupportedError(ValidationError):
    pass


# exit code 2: the data itself is unusable


class DataError(CatencError):
    exit_code = 2


class EmptyDataError(DataError):
    pass


class FitError(DataError):
    pass


class TransformError(DataError):
    pass


# exit code 3: numerical failures


class NumericError(CatencError):
    exit_code = 3


class DomainError(NumericError):
    pass


class FixtureError(NumericError):
    pass


class UndefinedImprovementError(NumericError):
    pass
