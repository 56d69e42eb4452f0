"""Exception hierarchy."""


class RandKMError(Exception):
    """Base class for every error raised by this package."""


class DegenerateBlockError(RandKMError, ValueError):
    """An agent's coefficient block is identically zero."""


class StepSizeError(RandKMError, ValueError):
    """A relaxation step size lies outside its admissible open interval."""


class UnmodeledActivationError(RandKMError, LookupError):
    """A gossip activation has no matching graph in the universe."""


class NumericalDivergenceError(RandKMError, FloatingPointError):
    pass


class InfeasibleError(RandKMError, ValueError):
    """The stacked constraints have no solution.

    ``residual`` holds the least-squares constraint residual.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ConfigError(RandKMError, ValueError):
    """Malformed experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class ConsistencyError(RandKMError, RuntimeError):
    """Two independent checks of the same property disagree."""
