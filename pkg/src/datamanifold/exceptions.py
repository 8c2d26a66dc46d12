"""Exception hierarchy shared by every module.

The command-line tool maps each class to a distinct exit code.
"""


class ManifoldError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 1


class DataFormatError(ManifoldError, ValueError):
    """Malformed input file or unparsable value."""

    exit_code = 2


class NumericalError(ManifoldError, ArithmeticError):
    """A numerical routine failed (degenerate sample, non-convergence, ...)."""

    exit_code = 3


class PreconditionError(ManifoldError, ValueError):
    """An argument violates a documented precondition."""

    exit_code = 4
