"""Exception hierarchy shared across the package."""


class BbbError(Exception):
    """Base class for all package-specific errors."""


class DomainError(BbbError, ValueError):
    """Invalid input for an operation (bad configuration, bad manifest, ...)."""


class CoverageError(DomainError):
    """A trajectory or lineage record does not cover the requested time window."""


class AmbiguousConfigurationError(DomainError):
    """A selection step hit a distance tie; the deterministic calculus refuses it.

    Attributes carry the diagnostic: the tying pair of (0-based) particle
    indices and the weight vector under which the tie occurred.
    """

    def __init__(self, pair, weights, message=None):
        self.pair = tuple(pair)
        self.weights = tuple(int(w) for w in weights)
        if message is None:
            message = (
                f"selection tie between particles {self.pair} "
                f"under weights {self.weights}"
            )
        super().__init__(message)


class ResourceLimitError(BbbError):
    """A simulation exceeded its configured memory/population budget."""
