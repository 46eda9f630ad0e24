"""Exception hierarchy shared by all modules.

Each class carries a ``exit_code`` used by the command-line driver.
"""


class MvlssError(Exception):
    exit_code = 1


class DataError(MvlssError):
    exit_code = 3


class NumericError(MvlssError):
    exit_code = 4


class NotPositiveDefinite(NumericError):
    pass


class SingularCovariance(NumericError):
    pass


class NonFinite(NumericError):
    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index


class NoConvergence(NumericError):
    pass


class InvalidResponse(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(DataError):
    pass


class FeatureMismatch(DataError):
    pass


class ConstantColumn(DataError):
    pass


class Unsupported(MvlssError):
    pass
