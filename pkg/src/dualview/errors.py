"""Exception hierarchy shared across the package."""


class DualViewError(Exception):
    """Base class for every error raised by dualview."""


class DimensionError(DualViewError, ValueError):
    """Array shapes do not line up."""


class ConfigError(DualViewError, ValueError):
    """A configuration value violates its invariants."""


class CapacityError(DualViewError, ValueError):
    """More candidates than the positional table can hold."""


class InputError(DualViewError, ValueError):
    """Malformed or empty input to a scoring/metric routine."""


class LoadError(DualViewError, ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StateError(DualViewError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class NumericalError(DualViewError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


class DegenerateCandidateSetWarning(UserWarning):
    """A pairwise/contrastive loss got a set without positives or negatives."""
