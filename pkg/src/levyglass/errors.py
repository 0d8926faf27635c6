"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code (see ``levyglass.harness.cli``).
"""


class LevyGlassError(Exception):
    """Base class for library errors."""

    exit_code = 1


class InputError(LevyGlassError, ValueError):
    """Malformed arguments or violated preconditions."""

    exit_code = 2


class ConfigError(InputError):
    """Experiment configuration failed schema validation."""

    exit_code = 2


class UnsupportedVariantError(InputError):
    """Operation not defined for the given coupling-law variant."""


class ResourceCapError(LevyGlassError):
    """An exact computation or simulation would exceed a configured size cap."""

    exit_code = 3

    def __init__(self, message, hint=None):
        if hint:
            message = f"{message} ({hint})"
        super().__init__(message)
        self.hint = hint


class StructuralError(LevyGlassError):
    """The coupling instance lacks a structural property an operation relies on.

    Examples: top edges sharing a vertex, a frustrated cycle of open bonds,
    overlapping timescale windows.
    """

    exit_code = 4

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = offending
