"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems exit 2, solver
failures exit 3 and failed cross-checks exit 4.
"""


class HedonicOTError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(HedonicOTError, ValueError):
    """Bad input: malformed files, inconsistent dimensions, broken preconditions."""


class MeasureFormatError(ValidationError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"{message} at row {row}"
        super().__init__(message)


class VariableCapExceeded(ValidationError):
    pass


class SolverError(HedonicOTError, RuntimeError):
    """A numerical routine failed to produce an admissible answer."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NewtonFailure(SolverError):
    pass


class NonUniqueMaximizer(SolverError):
    """Multistart runs converged to different contracts for one tuple."""


class SingularHessian(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class ToolkitDefect(HedonicOTError, AssertionError):
    """An internal cross-check that must hold by construction did not."""
