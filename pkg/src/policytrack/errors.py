"""Package exception types.

DataError covers malformed inputs (annotation files, frames, checkpoints);
NumericalError covers non-finite values showing up where finite ones are
required (e.g. a diverged training loss). The CLI maps these to distinct
exit codes.
"""


class DataError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass
