"""Exception hierarchy shared by all llab modules."""


class LlabError(Exception):
    """Base class for every error raised by llab."""


class GeometryError(LlabError):
    pass


class DegenerateQuadruple(GeometryError):
    pass


class ArcsNotSeparated(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class NoIntersection(GeometryError):
    pass


class NotHyperbolic(GeometryError):
    pass


class PointNotInArc(GeometryError):
    pass


class GroupError(LlabError):
    pass


class NumericalDegeneracy(GroupError):
    pass


class EnumerationBudget(GroupError):
    pass


class BudgetTooSmall(GroupError):
    pass


class RepresentationsMismatched(GroupError):
    pass


class ScaleRangeTooNarrow(LlabError):
    pass


class DerivativeUnstable(LlabError):
    pass


class TruncationBudget(LlabError):
    pass


class DepthTooSmall(LlabError):
    pass


class SeedCoverageError(LlabError):
    pass


class TailDiverges(LlabError):
    pass


class RegularityInsufficient(LlabError):
    """Raised in strict mode when the Hölder exponent does not certify the sum."""


class MemoryBudgetExceeded(LlabError):
    """A computation would exceed the configured memory budget."""
