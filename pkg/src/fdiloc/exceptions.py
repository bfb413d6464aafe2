"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data/model problems with 3 and numerical failures with 4.
"""


class FdilocError(Exception):
    """Base class for all package errors."""


class ConfigError(FdilocError, ValueError):
    """An experiment configuration failed validation."""


class DataError(FdilocError, ValueError):
    """Input data is malformed, inconsistent or insufficient."""


class CaseParseError(DataError):
    """A case file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    line : int, optional
        1-based line number in the case text where the problem was found.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GridModelError(DataError):
    """A parsed case violates a model invariant (slack count, references...)."""


class TopologyError(GridModelError):
    """The network graph is disconnected or has isolated nodes."""


class SingularBranchError(GridModelError):
    """A branch has zero series impedance."""


class NumericalError(FdilocError, ArithmeticError):
    """A numerical routine hit a singular system or non-finite values."""


class NonConvergenceError(NumericalError):
    """An iterative solver ran out of iterations.

    Attributes
    ----------
    mismatch : float
        Infinity norm of the residual at the last iterate.
    """

    def __init__(self, message, mismatch=float("nan")):
        self.mismatch = mismatch
        super().__init__(f"{message} (last mismatch {mismatch:.3e})")


class TrainingError(NumericalError):
    """Training produced a non-finite loss."""
