"""Exception types shared across the package."""


class NodalabError(Exception):
    """Base class for all package errors."""


class DegenerateWindowError(NodalabError):
    """The sphere average defining a rescaled window is (numerically) zero."""


class DomainError(NodalabError, ValueError):
    """A query point lies outside the domain where a solution is defined."""


class SolverError(NodalabError):
    """A linear solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class IndefiniteOperatorError(SolverError):
    """The discrete operator may be indefinite (large positive potential)."""


class ScenarioError(NodalabError, ValueError):
    """A scenario file violates the documented schema."""

    def __init__(self, message: str, keys=()):
        super().__init__(message)
        self.keys = list(keys)


class RecursionCapError(NodalabError):
    """A recursive covering exceeded its depth cap."""

    def __init__(self, message: str, branch=None):
        super().__init__(message)
        self.branch = branch


class NotGoodBallError(NodalabError):
    """A covering step was handed a ball that fails its goodness hypothesis."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness
