class DeepBootError(Exception):
    pass


class ConfigError(DeepBootError, ValueError):
    pass


class ShapeError(DeepBootError, ValueError):
    pass


class DomainError(DeepBootError, ValueError):
    pass


class TrainingError(DeepBootError, RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class SamplingError(DeepBootError, RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
