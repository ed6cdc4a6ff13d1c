"""Exception hierarchy shared by all modules."""


class LogitDynError(Exception):
    """Base class for every error raised by logitdyn."""


class InvalidInputError(LogitDynError, ValueError):
    """Malformed input: non-finite values, wrong shapes, bad class ids."""


class DegenerateFeatureError(InvalidInputError):
    """The feature vector has zero norm where a positive norm is required."""


class NumericalFailureError(LogitDynError, ArithmeticError):
    """An iterative numerical routine failed to converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class OracleFailureError(LogitDynError, RuntimeError):
    """A reference computation produced an unusable value."""


class NonFiniteStateError(LogitDynError, FloatingPointError):
    """A simulated trajectory produced NaN or Inf."""

    def __init__(self, message, step, dump=None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.dump = dump or {}
