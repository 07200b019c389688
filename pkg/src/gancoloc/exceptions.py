"""Exception types shared across the package.

Each class maps to one CLI exit code, see ``gancoloc.cli``.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(RuntimeError):
    """Missing, corrupt or inconsistent dataset files."""


class InputError(ValueError):
    """Array input with the wrong shape, range or dtype."""


class NumericalError(FloatingPointError):
    """A loss became non-finite during training."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DomainError(ValueError):
    """Probability outside the open interval (0, 1)."""


class CapabilityError(TypeError):
    """The discriminator cannot be differentiated with respect to its input."""
