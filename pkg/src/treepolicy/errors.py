"""Exception types shared across the package.

``ConfigError`` and its subclasses signal bad user input (CLI maps them to
exit code 2); everything else is a runtime failure (exit code 1).
"""


class ConfigError(ValueError):
    """Invalid configuration value, flag, or file format request."""


class ProfileError(ConfigError):
    """Malformed profile data. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDivergedError(RuntimeError):
    """NaN/Inf showed up during training; message carries seed/step context."""


class DegenerateNodeError(RuntimeError):
    """A decision node has no meaningful winning feature weight to harden."""
