"""Exception types raised across the package."""


class PsdGibbsError(Exception):
    """Base class for all package errors."""


class NonSymmetricInputError(PsdGibbsError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class ConvergenceFailureError(PsdGibbsError):
    """An iterative decomposition backend failed to converge."""


class NotOrthonormalError(PsdGibbsError):
    """Columns expected to be orthonormal are not, beyond tolerance."""


class DimensionMismatchError(PsdGibbsError):
    """Operands have incompatible shapes."""


class RankDeficientError(PsdGibbsError):
    """A point left the fixed-rank manifold (smallest spectral value at or below the rank floor)."""


class InvalidMetricError(PsdGibbsError):
    """Unknown metric identifier."""


class UnsupportedRankError(PsdGibbsError):
    """Rank outside the range supported by the quadrature reference."""


class QuadratureUnconvergedError(PsdGibbsError):
    """Doubling the quadrature resolution moved grid values more than the drift tolerance."""


class EmptyTraceError(PsdGibbsError):
    """An operation needs at least one retained sample."""


class GridMismatchError(PsdGibbsError):
    """Two CDFs do not share the same evaluation grid."""


class InsufficientDataError(PsdGibbsError):
    """Too few data points for the requested fit."""


class IntegralOverflowError(PsdGibbsError):
    """An importance weight exponent exceeds the representable range."""


class IntegralDomainError(PsdGibbsError):
    """Closed-form integral parameters outside the convergence domain."""


class BoundaryHitError(RankDeficientError):
    """A chain step landed on the manifold boundary and redraws were exhausted."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class ChainAbortedError(PsdGibbsError):
    """A chain terminated early; carries the iteration index and cause."""

    def __init__(self, message: str, iteration: int, cause: Exception | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.cause = cause


class EnsembleError(PsdGibbsError):
    """One or more ensemble chains failed; carries per-chain errors."""

    def __init__(self, errors: dict[int, Exception]):
        msg = "; ".join(f"chain {i}: {e}" for i, e in sorted(errors.items()))
        super().__init__(f"{len(errors)} ensemble chain(s) failed: {msg}")
        self.errors = errors


class ExperimentSpecError(PsdGibbsError):
    """An experiment spec file is invalid or inconsistent."""


class MissingTraceError(PsdGibbsError):
    """A trace file referenced by a command does not exist."""
