from typing import Optional


class SICError(Exception):
    """Base class for every failure raised by the toolkit"""


class PreconditionError(SICError, ValueError):
    """An operation was called with arguments violating its preconditions"""


class DimensionError(PreconditionError):
    def __init__(self, what: str, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class NumericError(SICError, FloatingPointError):
    """A non-finite value showed up in a loss term or gradient"""

    def __init__(self, term: str, iteration: Optional[int] = None):
        self.term = term
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"Non-finite value in {term}{where}")


class SingularSystemError(SICError):
    pass


class ConvergenceError(SICError):
    pass


class DegenerateCovarianceError(SICError):
    pass
