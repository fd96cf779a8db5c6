"""Exception types shared across the link modules."""


class ZeroVectorError(ValueError):
    """Raised when a cosine-based quantity is requested for a zero-norm vector."""


class BudgetError(ValueError):
    """Raised when no spatial compression ratio meets a channel-use budget."""
