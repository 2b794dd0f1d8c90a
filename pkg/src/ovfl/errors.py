"""Exception types shared across the package."""


class OvflError(Exception):
    """Base class for all package errors."""


class ShapeError(OvflError, ValueError):
    pass


class ConfigError(OvflError, ValueError):
    """Invalid configuration. ``field`` names the offending dotted key when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = ""
        if field is not None:
            prefix = f"{field}: "
        if line is not None:
            prefix = f"line {line}: " + prefix
        super().__init__(prefix + message)


class ProtocolError(OvflError, RuntimeError):
    pass


class NumericDivergenceError(OvflError, ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, round_index=None):
        self.round_index = round_index
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
