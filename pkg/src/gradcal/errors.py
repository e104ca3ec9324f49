"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration or inconsistent dimensions."""


class StateError(RuntimeError):
    """Operation invoked in a state that cannot serve it (e.g. sampling an
    empty buffer, reading an incomplete accuracy row)."""


class ParseError(ValueError):
    """Malformed input file; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")
