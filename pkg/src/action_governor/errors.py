"""Exception hierarchy shared by every module of the package."""


class GovernorError(Exception):
    """Base class for all errors raised by action_governor."""


class DimensionMismatch(GovernorError, ValueError):
    pass


class NumericalFailure(GovernorError, ArithmeticError):
    pass


class NotPositiveDefinite(GovernorError, ValueError):
    pass


class InfeasibleProblem(GovernorError):
    pass


class UnboundedDirection(GovernorError):
    pass


class UnboundedPolytope(GovernorError, ValueError):
    pass


class EmptyPolytope(GovernorError, ValueError):
    pass


class SingularMatrix(GovernorError, ArithmeticError):
    pass


class OriginNotInU(GovernorError, ValueError):
    pass


class UnstableClosedLoop(GovernorError, ValueError):
    pass


class SeedInadmissible(GovernorError, ValueError):
    pass


class RiccatiDivergence(GovernorError, ArithmeticError):
    pass


class NotStabilizable(GovernorError, ValueError):
    pass


class EmptySaturationRange(GovernorError, ValueError):
    pass


class ScenarioError(GovernorError, ValueError):
    """Scenario file is malformed or inconsistent."""


class HashMismatch(GovernorError):
    """A persisted set file was computed for a different system."""
