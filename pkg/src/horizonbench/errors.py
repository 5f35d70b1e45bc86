"""Exception hierarchy shared by all horizonbench modules."""


class BenchError(Exception):
    """Base class for every error raised by this package."""


# --- data layer ---------------------------------------------------------


class MissingColumnError(BenchError):
    pass


class BadDateError(BenchError):
    pass


class BadCountError(BenchError):
    pass


class UnknownCountryError(BenchError):
    pass


class EmptyRangeError(BenchError):
    pass


class TooShortError(BenchError):
    pass


class ConstantSeriesError(BenchError):
    pass


# --- numerical kernel ---------------------------------------------------


class ShapeMismatchError(BenchError):
    pass


class LengthMismatchError(BenchError):
    pass


class EmptyInputError(BenchError):
    pass


class NonDeterministicForwardError(BenchError):
    pass


# --- models -------------------------------------------------------------


class InvalidConfigError(BenchError):
    pass


class IndivisibleWindowError(InvalidConfigError):
    pass


class MissingForwardCacheError(BenchError):
    pass


# --- training / forecasting ---------------------------------------------


class DivergedLossError(BenchError):
    pass


class SeriesTooShortError(BenchError):
    pass


# --- metrics / statistics -------------------------------------------------


class NegativeValueError(BenchError):
    pass


class AllActualsZeroError(BenchError):
    pass


class ConstantActualsError(BenchError):
    pass


class MissingMetricError(BenchError):
    pass


class DegenerateTableError(BenchError):
    pass


class DegenerateDenominatorError(BenchError):
    pass


class ConvergenceFailureError(BenchError):
    pass


# --- CLI / configuration ---------------------------------------------------


class UnknownKeyError(BenchError):
    pass


class InvalidValueError(BenchError):
    pass


class MissingDataPathError(BenchError):
    pass


class SchemaMismatchError(BenchError):
    pass
