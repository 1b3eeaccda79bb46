"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the physical domain of an operation."""


class ConsistencyError(RuntimeError):
    """Internal numerical consistency check failed (e.g. a probability left [0, 1])."""


class FitError(RuntimeError):
    """Fringe fit could not be carried out or did not converge."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SingularFisherWarning(RuntimeWarning):
    """Fisher information is singular at some phase values (zero-probability outcome)."""


class IdempotenceWarning(UserWarning):
    """An operation was applied to data already in its output form."""
