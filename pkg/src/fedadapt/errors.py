"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """A configuration object violates its invariants."""


class InputError(ValueError):
    """An operation received malformed or mismatched inputs."""


class NumericError(ArithmeticError):
    """A numeric computation produced NaN or Inf."""


class EvaluationError(ValueError):
    """An accuracy metric cannot be computed on the given data."""


class TrainingError(RuntimeError):
    """Training diverged; carries where it happened."""

    def __init__(self, message, epoch=None, strategy=None):
        super().__init__(message)
        self.epoch = epoch
        self.strategy = strategy
