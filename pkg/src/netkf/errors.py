"""Exception types shared across the package."""


class NetkfError(Exception):
    """Base class for all package errors."""


class DimensionError(NetkfError):
    """Shape or argument-contract violation (empty matrix, mismatched sizes)."""


class ModelError(NetkfError):
    """Model data violates a structural invariant (non-PSD covariance, bad pmf)."""


class ScenarioError(NetkfError):
    """Scenario file cannot be parsed or fails schema validation."""


class NumericalError(NetkfError):
    """A linear-algebra step failed; carries a condition-number estimate."""

    def __init__(self, message: str, cond: float | None = None):
        if cond is not None:
            message = f"{message} (condition estimate {cond:.3e})"
        super().__init__(message)
        self.cond = cond
