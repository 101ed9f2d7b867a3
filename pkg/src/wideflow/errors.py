"""Exception types used across the package."""


class WideflowError(Exception):
    """Base class for all package errors."""


class BadExponent(WideflowError):
    """Integrability exponent outside the admissible range."""


class DivergenceTooLarge(WideflowError):
    """Input velocity is not divergence-free within tolerance."""


class NotSkew(WideflowError):
    """Tensor field fails the skew-symmetry check."""


class NonzeroMean(WideflowError):
    """Vector field has a nonzero spatial mean."""


class BadMatrix(WideflowError):
    """Matrix argument fails the symmetry / trace-free check."""


class NoConvergence(WideflowError):
    """Iterative estimate failed to stabilise."""


class SolveFailure(WideflowError):
    """Scalar root solve could not bracket or converge."""


class ExponentOutOfRange(WideflowError):
    """Growth exponent violates the standing assumption p > 2d/(d+2)."""


class CannotSatisfyIV(WideflowError):
    """No spectral cutoff satisfies the initial-data bounds."""


class LineSearchFailure(WideflowError):
    """Backtracking line search could not find a descent step."""


class StepSolveFailure(WideflowError):
    """Implicit viscous step did not converge."""


class CFLViolation(WideflowError):
    """Explicit convection step violates the CFL restriction."""


class IncompatibleGrids(WideflowError):
    """Operands live on different grids."""


class WindowMismatch(WideflowError):
    """Space-time fields live on different windows."""


class LevelRangeExhausted(WideflowError):
    """Dyadic level range cannot resolve the bad set."""


class CoverMismatch(WideflowError):
    """Cube cover does not belong to the given bad set."""


class ConfigInvalid(WideflowError):
    """Run configuration failed validation."""
