"""Exception types shared across the package."""


class ApsingError(Exception):
    """Base class for all package errors."""


class DomainMismatchError(ApsingError):
    """Operands live on different grids."""


class UnsupportedResolutionError(ApsingError):
    """Requested grid exceeds the configured node cap."""


class DegenerateEigenvalueError(ApsingError):
    """Eigenvalue gap below the simplicity threshold."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class RangeViolationError(ApsingError):
    """A constructed nonlinearity leaves its declared derivative range."""


class NotFoundError(ApsingError):
    """A requested witness point does not exist on the search window."""


class InconclusiveScanError(ApsingError):
    """Scan resolution too coarse to certify or refute a hypothesis."""


class NoConvergenceError(ApsingError):
    """An iterative solve exhausted its budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ContinuationStallError(ApsingError):
    """Adaptive step size underflowed during fiber continuation."""


class OutOfDomainError(ApsingError):
    """Arguments outside the admissible region of a search."""


class NoBracketError(ApsingError):
    """A scalar root search found no sign change."""


class JacobianSingularError(ApsingError):
    """Probe-direction Jacobian is numerically singular."""


class StageFailureError(ApsingError):
    """A pipeline stage failed; carries the stage name and diagnostics."""

    def __init__(self, stage, message, diagnostics=None):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.diagnostics = diagnostics or {}


class SchemaError(ApsingError):
    """Input file does not match the published schema."""
