"""Error types shared across the package."""


class ConfigurationError(ValueError):
    """A scenario, sweep, or detector configuration is inconsistent."""


class NumericalFailure(RuntimeError):
    """An iterative solver produced non-finite values.

    Carries the iteration index where the failure was detected so callers can
    report it instead of hiding the trial.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SingularEstimateError(ValueError):
    """A channel estimate contains a zero entry and cannot be inverted."""


class DegenerateSupportError(ValueError):
    """A least-squares support is rank deficient or larger than the number of
    observations."""
