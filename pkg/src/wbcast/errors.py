"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A numeric parameter is outside the range an operation accepts."""


class FaultBoundError(ValueError):
    """The fault bound f >= n/3 breaks Byzantine quorum intersection."""


class ProtocolMisuseError(RuntimeError):
    """A state machine was driven in a way its contract forbids."""


class ConfigError(ValueError):
    """A scenario or sweep configuration failed validation."""
