"""Exception and warning types raised across the package."""


class FtmasError(Exception):
    """Base class for all package errors."""


class NotHurwitz(FtmasError):
    pass


class IllConditioned(FtmasError):
    pass


class Infeasible(FtmasError):
    pass


class HamiltonianImaginaryAxis(Infeasible):
    """Hamiltonian has eigenvalues on (or numerically at) the imaginary axis."""


class MaxIterExceeded(FtmasError):
    """LMI search stopped without a certificate.

    This is evidence of infeasibility, never a proof.  The best point found
    is attached as ``best`` (an ``LmiSolution``).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NotControlledInvariant(FtmasError):
    pass


class NoSpanningTree(FtmasError):
    pass


class MMatrixViolation(FtmasError):
    pass


class AllActuatorsLost(FtmasError):
    pass


class NotStabilizable(FtmasError):
    pass


class NeverExceeds(FtmasError):
    """State never leaves the admissible ball; the delay bound is infinite."""


class NonFiniteState(FtmasError):
    pass


class ZeroDisturbanceEnergy(FtmasError):
    pass


class ConfigError(FtmasError):
    """Invalid run configuration; ``diagnostics`` lists (location, message)."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class DegenerateSubspaceWarning(UserWarning):
    """The maximal controlled invariant subspace is trivial."""


class FriendResidualWarning(UserWarning):
    """The friend equation is only solvable in the least-squares sense."""
