"""Exception types raised across the package."""


class FinclassError(Exception):
    """Base class for every error raised by finclass."""


class InvalidInputError(FinclassError, ValueError):
    pass


class InvalidParameterError(FinclassError, ValueError):
    pass


class InvalidShapeError(FinclassError, ValueError):
    pass


class InvalidConfigError(FinclassError, ValueError):
    pass


class DivergedError(FinclassError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class CheckpointFormatError(FinclassError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


class CheckpointCorruptionError(CheckpointFormatError):
    pass
