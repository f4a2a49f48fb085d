"""Exception types shared across the package."""


class KancimError(Exception):
    """Base class."""


class DomainError(KancimError, ValueError):
    """Input outside the spline domain under the strict policy."""


class ShapeError(KancimError, ValueError):
    pass


class TrainingDivergedError(KancimError):
    """Loss went non-finite; ``checkpoint`` holds the last good model."""

    def __init__(self, msg, checkpoint=None, epoch=None):
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.epoch = epoch


class QuantRangeError(KancimError, ValueError):
    pass


class CalibrationError(KancimError):
    pass


class DegenerateInputError(KancimError, ValueError):
    pass


class MappingError(KancimError, ValueError):
    pass


class ConfigError(KancimError):
    pass


class InfeasibleError(KancimError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report
