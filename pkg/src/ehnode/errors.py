"""Exception types raised across the package."""


class EhnodeError(Exception):
    """Base class for every error raised by ehnode."""


class ParameterError(EhnodeError, ValueError):
    """A numeric parameter is outside its admissible range."""


class InputError(EhnodeError, ValueError):
    """An input file or sample sequence is unusable."""


class EstimationError(EhnodeError, ValueError):
    """Not enough data to form the requested estimate."""


class UnsupportedError(EhnodeError, NotImplementedError):
    """The requested operation has no closed form for this object."""


class DomainError(EhnodeError, ValueError):
    """A function was evaluated outside its domain."""


class ConfigurationError(EhnodeError, ValueError):
    """Parameters are individually valid but inconsistent together."""


class StabilityError(ConfigurationError):
    """Arrival rate is not below the channel capacity at the mean energy."""


class ExistenceError(EhnodeError, ArithmeticError):
    """A root or limit does not exist on the requested side."""


class FitError(EhnodeError, ValueError):
    """Too few usable points for a regression."""


class RangeError(EhnodeError, OverflowError):
    """A numeric evaluation would overflow."""


class ResourceError(EhnodeError, MemoryError):
    """The requested computation exceeds a documented size cap."""


class DecompositionError(EhnodeError, ValueError):
    """A Markov chain is reducible or periodic."""
