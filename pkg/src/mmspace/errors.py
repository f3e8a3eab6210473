"""Exception hierarchy shared by all modules."""


class MMSpaceError(Exception):
    """Base class for every error raised by the package."""


class InputError(MMSpaceError, ValueError):
    """Arguments violate an operation's preconditions."""


class EvaluationError(MMSpaceError):
    """A weight function, gradient or kernel could not be evaluated."""


class ResolutionError(MMSpaceError):
    """The discretisation is too coarse (for instance a disconnected grid)."""


class CapacityError(MMSpaceError):
    """The requested dense storage exceeds the configured memory budget."""


class GeometryError(MMSpaceError):
    """A geometric construction failed (missing midpoint, broken chain)."""


class ConsistencyError(MMSpaceError):
    """Local data disagree on an overlap where they must agree."""


class ConfigurationError(MMSpaceError):
    """Derived constants make a check meaningless (e.g. omega <= 0)."""
