"""
Exception hierarchy shared by every stage.

Configuration problems map to CLI exit code 2, numerical failures to 3.
"""


class NearFieldImagingError(Exception):
    exit_code = 1


class ConfigurationError(NearFieldImagingError):
    exit_code = 2


class ContractError(ConfigurationError):
    """A stage received data that violates its precondition."""


class NumericalStageError(NearFieldImagingError):
    exit_code = 3


class DomainError(NumericalStageError, ValueError):
    pass


class SpecialFunctionOverflow(NumericalStageError, OverflowError):
    pass


class SingularityError(NumericalStageError):
    pass


class DegenerateReferenceError(NumericalStageError):

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = [tuple(int(i) for i in idx) for idx in indices]


class IncompatibleDataError(NumericalStageError):
    pass


class ValidityError(NumericalStageError):
    pass


class FramingError(NumericalStageError):
    pass


class UndefinedHarmonicError(NumericalStageError):
    pass


class ChainError(NumericalStageError):

    def __init__(self, position, cause):
        super().__init__(f"probe position {position}: {cause}")
        self.position = position
        self.cause = cause


class MetricError(NumericalStageError):
    pass


class StageError(NearFieldImagingError):
    """Raised by the pipeline runner; carries the failing stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)

    def report(self):
        return {
            "stage": self.stage,
            "error_type": type(self.cause).__name__,
            "message": str(self.cause),
            "exit_code": self.exit_code,
        }
