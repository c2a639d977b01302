"""Exception types shared across the engine."""


class ConfigurationError(ValueError):
    """A statically-checkable mistake: bad shapes, bad config fields."""


class InputError(ValueError):
    """Runtime data violates a contract (label range, batch shape, NaN)."""


class UsageError(RuntimeError):
    """API misuse, e.g. backpropagating through the same tape twice."""


class BudgetTooSmallError(ValueError):
    """An anytime budget below the cost of the first classifier."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""
