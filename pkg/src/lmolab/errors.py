"""Exception types.

Every error raised on purpose by the package derives from ``LabError``.
``ValidationError`` marks bad input or configuration (CLI exit code 2);
anything else is a runtime failure (exit code 1).
"""


class LabError(Exception):
    pass


class ValidationError(LabError, ValueError):
    pass


class InvalidParameter(ValidationError):
    pass


class InvalidInput(ValidationError):
    pass


class InvalidState(ValidationError):
    pass


class DegenerateInput(ValidationError):
    pass


class UnsupportedNorm(ValidationError):
    pass


class OracleTooLarge(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class PreconditionViolation(ValidationError):
    pass


class DegenerateInstance(ValidationError):
    pass


class IncompatibleCheckpoint(ValidationError):
    pass


class ProfileConstructionFailed(LabError):
    pass


class NumericFailure(LabError, ArithmeticError):
    def __init__(self, message, matrix_id=None):
        super().__init__(message if matrix_id is None else f"{message} (matrix {matrix_id})")
        self.matrix_id = matrix_id
