from typing import Any, Optional, Tuple


class CantorTreeError(Exception):
    pass


class ValidationError(CantorTreeError):
    pass


class InvalidVertexError(ValidationError):
    pass


class ParameterViolation(ValidationError):
    def __init__(
            self,
            message: str,
            interval: Optional[Tuple[float, float]] = None
    ):
        if interval is not None:
            message = f'{message} (admissible interval: ' \
                      f'({interval[0]:.6g}, {interval[1]:.6g}))'
        super().__init__(message)
        self.interval = interval


class RegimeViolation(ParameterViolation):
    pass


class SchemaMismatchError(ValidationError):
    pass


class NoParentError(CantorTreeError):
    pass


class SameCellError(CantorTreeError):
    pass


class UnsupportedError(CantorTreeError):
    pass


class NotAnUpperGradientError(CantorTreeError):
    pass


class ResolutionError(CantorTreeError):
    pass


class TooFewTriplesError(CantorTreeError):
    pass


class ConditionFailure(CantorTreeError):
    def __init__(self, message: str, witness: Any = None):
        super().__init__(message)
        self.witness = witness


class AcceptanceFailure(ConditionFailure):
    pass
