"""Shared exception types for the probe station."""


class StationError(Exception):
    """Base class for all probe-station errors."""

    code = "error"

    def __str__(self) -> str:
        msg = super().__str__()
        return msg if msg else self.code


class ValidationError(StationError):
    """A configuration value or command argument violates an invariant."""

    code = "invalid"


class LimitError(StationError):
    """A motion would leave the configured axis limits; nothing moved."""

    code = "limit"


class EStopError(StationError):
    """Refused because the emergency stop is latched."""

    code = "estop"


class BusyError(StationError):
    """A mutually exclusive procedure is already running."""

    code = "busy"
