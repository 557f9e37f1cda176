"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CfRefineError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CfRefineError, ValueError):
    pass


class InvalidTargetError(InputError):
    pass


class SchemaError(InputError):
    pass


class DatasetError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(InputError):
    pass


class ServiceError(CfRefineError):
    """Any failure talking to an external model service."""


class TransportError(ServiceError):
    def __init__(self, message: str, attempts: int | None = None):
        self.attempts = attempts
        self.reason = message
        if attempts is not None:
            message = f"{message} (after {attempts} attempts)"
        super().__init__(message)


class ProtocolError(ServiceError):
    """The service answered, but the payload breaks the wire contract."""


class PromptTooLongError(ServiceError):
    pass


class DegenerateEmbeddingError(ServiceError):
    pass


class AlignmentError(CfRefineError):
    pass


class RenderError(CfRefineError, KeyError):
    def __str__(self) -> str:
        return self.args[0] if self.args else ""


class CfParseError(CfRefineError):
    pass


class JudgeParseError(CfRefineError):
    pass


class NumericalError(CfRefineError, ArithmeticError):
    pass


class OracleCapError(CfRefineError):
    pass


class UndefinedAgreementError(CfRefineError, ArithmeticError):
    pass


class UndefinedCorrelationError(CfRefineError, ArithmeticError):
    pass
