"""Exception types shared across the package."""


class FairmleError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(FairmleError, ValueError):
    """Malformed dataset: bad CSV rows, non-binary codes, inconsistent missingness."""


class SeparationError(FairmleError, RuntimeError):
    """Logistic MLE diverges (complete or quasi-complete separation)."""


class RankDeficiencyError(FairmleError, RuntimeError):
    """Design matrix is rank deficient / information matrix singular."""


class PositivityError(FairmleError, RuntimeError):
    """A probability used as an inverse weight fell below the positivity floor."""


class InfeasibleConstraintError(FairmleError, RuntimeError):
    """Empirical-likelihood moment constraint has no interior solution."""


class ConvergenceError(FairmleError, RuntimeError):
    """An iterative fit failed to reach its stated tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
