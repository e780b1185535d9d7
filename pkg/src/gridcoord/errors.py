"""Exception hierarchy shared by every gridcoord module."""


class GridcoordError(Exception):
    """Base class for all package errors."""


class CaseParseError(GridcoordError):
    """The case file is unreadable or not valid JSON for the case format."""


class CaseReferenceError(GridcoordError):
    """A record refers to a node, region, load or generator id that does not exist."""


class DomainError(GridcoordError, ValueError):
    """An argument or a network violates a documented invariant.

    ``path`` names the offending field (``generators[0].p_max``) when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SolverError(GridcoordError):
    """A subproblem could not be solved to optimality."""

    def __init__(self, message: str, status: str | None = None):
        self.status = status
        super().__init__(message)


class ConvergenceError(GridcoordError):
    """An iterative stage hit its iteration limit; ``partial`` carries the last state."""

    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)
