"""Exception hierarchy shared across the package.

Every error raised on a user-facing path derives from :class:`BinsdeError`
so the CLI can map failures to stable exit codes and a machine-readable
error record.
"""


class BinsdeError(Exception):
    """Base class for all package errors."""


class ConfigError(BinsdeError, ValueError):
    """Invalid configuration: unknown keys, missing seed, bad values."""


class ValidationError(BinsdeError, ValueError):
    """Invalid data or arguments passed to a library operation."""


class IOFormatError(BinsdeError, ValueError):
    """Malformed input file (bad header, NaN rows, non-uniform timestamps)."""


class DivergenceError(BinsdeError, ArithmeticError):
    """A simulated trajectory left the divergence guard (|x| > limit)."""

    def __init__(self, message, step=None, value=None):
        super().__init__(message)
        self.step = step
        self.value = value


class StarvationError(BinsdeError, RuntimeError):
    """fixed_per_bin collection exhausted its budget with deficient bins."""

    def __init__(self, message, counts=None, target=None):
        super().__init__(message)
        self.counts = counts
        self.target = target


class ZeroMassBinError(BinsdeError, ArithmeticError):
    """A truncated-density expectation was requested on a zero-mass bin."""


class NonNormalizableError(BinsdeError, ArithmeticError):
    """The stationary-density integral does not converge on the support."""


class ConvergenceError(BinsdeError, RuntimeError):
    """An iterative solver exceeded its iteration budget."""
