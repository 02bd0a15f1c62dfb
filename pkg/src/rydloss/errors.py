"""Exception hierarchy shared by all numerical modules."""


class RydlossError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RydlossError, ValueError):
    """Invalid or missing physical input.

    Attributes
    ----------
    field : str
        Name of the offending parameter.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class PoleError(RydlossError, ArithmeticError):
    """An expression was evaluated on (or numerically at) one of its poles."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(message if location is None else f"{message} (at {location})")


class ResonanceError(PoleError):
    """chi_bar vanishes, so quantities scaling with 1/chi_bar are undefined."""


class WindowError(RydlossError, ValueError):
    """A root or extremum was not bracketed inside the search window."""


class TrackingError(RydlossError):
    """Branch continuity tracking became ambiguous; densify the momentum grid."""


class ConvergenceError(RydlossError):
    """A quadrature or grid refinement did not reach its accuracy target."""


class MemoryBudgetError(RydlossError, MemoryError):
    """The requested grid does not fit the configured memory budget."""


class TruncationError(RydlossError, ValueError):
    """A request lies beyond the horizon supported by the stored solution."""
