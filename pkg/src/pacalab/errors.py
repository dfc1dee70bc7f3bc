"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class StateError(RuntimeError):
    """Operation requires state that was never produced (e.g. backward without a train-mode forward)."""


class DecodeError(ValueError):
    """Malformed quantized payload: bad code, bad header, or truncated data."""


class ConfigError(ValueError):
    """Invalid experiment configuration. Carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")
