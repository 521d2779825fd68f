"""Error taxonomy shared across the package.

Plain ValueError is used for malformed arguments (shape/horizon/precondition
violations); the classes here carry meaning the CLI maps to exit codes.
"""


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, invalid value, unstable dt)."""


class ResourceLimitError(RuntimeError):
    """A configured cap (node count, particle count) was exceeded."""


class CouplingError(RuntimeError):
    """Two measures that must match within tolerance do not."""

    def __init__(self, message, gap=None):
        if gap is not None:
            message = f"{message} (W2 gap {gap:.3e})"
        super().__init__(message)
        self.gap = gap


class DomainError(ValueError):
    """Mass found outside the state domain where it is required inside."""
