"""Exception hierarchy.

Validation-type errors map to CLI exit code 1, numeric failures to exit code 3.
"""


class PolicyEvalError(Exception):
    exit_code = 1


class ValidationError(PolicyEvalError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ScheduleError(ValidationError):
    """Age not covered by a cost schedule or grant spec."""


class RoleError(ValidationError):
    """Dataset used in a role it is not allowed to play (ex-ante firewall)."""


class CoverageError(ValidationError):
    """Prediction requested outside the fitted support."""


class SchemaError(ValidationError):
    """Feature layout mismatch between fitted objects."""


class ConfigError(ValidationError):
    pass


class NumericError(PolicyEvalError, ArithmeticError):
    exit_code = 3


class InferenceError(NumericError):
    """Contrast estimation impossible on the supplied data."""


class GrowthError(NumericError):
    """Tree growth impossible under the requested configuration."""


class BandwidthError(NumericError):
    pass


class ExtrapolationError(NumericError):
    pass


class StateError(NumericError):
    """Dynamic-programming inputs do not cover the state grid."""


class OptimizationError(NumericError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
