"""Shared exception types."""


class HandyLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(HandyLabError, ValueError):
    """Invalid parameter values or run configuration."""


class ShapeMismatchError(HandyLabError, ValueError):
    """Incompatible shapes, timestamps or dimensions between inputs."""


class IntegrationDivergedError(HandyLabError, RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t={time:g})")
        self.time = time


class StagnationError(HandyLabError, RuntimeError):
    """A sampler generation failed to find acceptable particles."""

    def __init__(self, message: str, last_epsilon: float):
        super().__init__(message)
        self.last_epsilon = last_epsilon


class BarrierError(HandyLabError, RuntimeError):
    """A coupling coefficient reached or crossed a barrier."""
