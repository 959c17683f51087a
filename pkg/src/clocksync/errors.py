"""Exception types shared across the package."""


class ClockSyncError(Exception):
    """Base class for errors raised by clocksync."""


class InvalidArgument(ClockSyncError, ValueError):
    """A caller passed a value outside an operation's domain."""


class MeasurementFailed(ClockSyncError, RuntimeError):
    """An estimator could not produce a ppm value from the capture."""


class DataError(ClockSyncError, ValueError):
    """A dataset file is malformed. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
