"""Exception hierarchy shared by every gpinet module."""


class GpiError(Exception):
    """Base class for all library errors."""


class ShapeError(GpiError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(GpiError, ArithmeticError):
    """An operation produced NaN or Inf."""


class ContractError(GpiError, ValueError):
    """A precondition of an operation was violated."""


class CapabilityError(GpiError):
    """The request is valid but exceeds a configured bound."""


class OracleError(GpiError):
    """A black-box oracle returned something unusable."""


class NonInvariantOracleError(OracleError):
    """An oracle failed the permutation-invariance pre-check.

    ``permutation`` holds the offending node mapping and ``matrix`` the input
    on which ``F(sigma(Z)) != sigma(F(Z))``.
    """

    def __init__(self, message, permutation=None, matrix=None):
        super().__init__(message)
        self.permutation = permutation
        self.matrix = matrix


class TrainingDiverged(GpiError):
    """Loss became non-finite during training."""
