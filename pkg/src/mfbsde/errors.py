"""Exception hierarchy shared by all modules."""


class MfbsdeError(Exception):
    """Base class for package errors."""


class ParameterError(MfbsdeError, ValueError):
    """Invalid argument or configuration (maps to CLI exit code 2)."""


class NumericError(MfbsdeError, ArithmeticError):
    """Numerical failure: divergence, non-finite values (CLI exit code 3)."""
