"""Exception types shared across the package."""


class NmtrajError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(NmtrajError):
    """A kernel matrix failed its positive-(semi)definiteness check."""


class SingularWindow(NmtrajError):
    """A window submatrix is too ill-conditioned to invert reliably."""


class PathBudgetExceeded(NmtrajError):
    """The projector path enumeration would exceed the configured budget.

    Reduce the number of steps, the Hilbert dimension, or raise the budget.
    """


class DegenerateWeights(NmtrajError):
    """Importance weights collapsed onto too few samples (tiny effective
    sample size); the ensemble estimate would be unreliable."""


class ConfigError(NmtrajError):
    """A run configuration failed validation.  The message carries the
    offending field path (and line number for JSON syntax errors)."""
