"""Exception types shared across the toolkit."""


class FaultlineError(Exception):
    pass


class ShapeError(FaultlineError, ValueError):
    """Operand shapes or layer geometry do not compose."""


class FormatError(FaultlineError, ValueError):
    """A file does not match its documented on-disk format."""


class DataError(FaultlineError, ValueError):
    """A file parsed structurally but carries invalid values (NaN/Inf, bad labels)."""


class DegenerateClassError(FaultlineError, ValueError):
    """A class embedding averaged to the zero vector and cannot be normalized."""


class StructureError(FaultlineError, ValueError):
    """A model graph violates a structural requirement (e.g. non-fusable head)."""


class TrainingError(FaultlineError, RuntimeError):
    """Training diverged. Carries the epoch index where the loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class UndefinedRatioError(FaultlineError, ArithmeticError):
    """Improvement ratio is undefined because the denominator mean is <= 0."""

    def __init__(self, message: str, baseline_mean: float, ours_mean: float):
        super().__init__(message)
        self.baseline_mean = baseline_mean
        self.ours_mean = ours_mean


class ComparisonError(FaultlineError, ValueError):
    """Two reports cannot be compared (mismatched configs or missing scope)."""


class ConfigError(FaultlineError, ValueError):
    """A run configuration is missing required keys or has invalid values."""
