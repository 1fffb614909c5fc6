"""Exception hierarchy shared across odefit modules."""


class OdefitError(Exception):
    """Base class for all errors raised by odefit."""


class SeriesError(OdefitError, ValueError):
    """Malformed or invalid time-series data.

    ``row`` is the 1-based data row (header excluded) where the problem was
    found, when one applies.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DegenerateGridError(SeriesError):
    """A finite-difference denominator vanished for some sample triple."""


class ModelDomainError(OdefitError, ValueError):
    """Model evaluated outside its domain (e.g. a vanishing denominator)."""

    def __init__(self, message, index=None, state=None):
        super().__init__(message)
        self.index = index
        self.state = state


class SingularSystemError(OdefitError, ArithmeticError):
    """Normal equations are rank deficient and no damping was requested."""

    def __init__(self, message, rank=None, subset=None):
        super().__init__(message)
        self.rank = rank
        self.subset = subset


class IntegrationError(OdefitError, ArithmeticError):
    """The numerical integrator produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(OdefitError, ValueError):
    """Invalid solver or experiment configuration."""


class AllGuessesFailedError(OdefitError):
    """Every initial guess of a fit run failed."""
