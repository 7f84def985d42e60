"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation is defined on."""


class UsageError(RuntimeError):
    """An API was called in an invalid order or state."""


class TrainingAborted(RuntimeError):
    """Training hit a non-finite value and was stopped."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class EmptyBatchWarning(UserWarning):
    """A batch contributed no samples to a progress estimate."""


class DegenerateBatchWarning(UserWarning):
    """A batch produced a degenerate weighting (e.g. a single class)."""
