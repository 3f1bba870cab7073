"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition (shape, finiteness, symmetry)."""


class SingularMatrixError(ValueError):
    """A matrix required to be SPD / full rank is numerically singular."""


class MarginError(ValueError):
    """A separating-margin precondition fails (e.g. required margin not met)."""


class NonConvergenceError(RuntimeError):
    """Iterative solver hit its iteration cap.

    Carries the best iterate found so far in ``best`` and the residual /
    KKT gap in ``gap`` so callers can decide whether to accept it.
    """

    def __init__(self, message, best=None, gap=None):
        super().__init__(message)
        self.best = best
        self.gap = gap


class CyclingError(RuntimeError):
    """Active-set solver revisited a previous working set without progress."""


class PathOverrunError(RuntimeError):
    """Homotopy path produced more breakpoints than the safety cap allows."""
