"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numerical failures exit 4.
"""


class ExpavgError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ExpavgError, ValueError):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DataError(ExpavgError, ValueError):
    """Base class for problems with the observed data."""


class EmptyDatasetError(DataError):
    pass


class MalformedRecordError(DataError):
    """A record failed validation; ``index`` points at the offending row."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"record {index}: {message}")


class DegenerateDataError(DataError):
    """All event indicators equal; the null fit is degenerate."""


class UnidentifiedDirectionError(DataError):
    """No observations on one side of a threshold, so the jump is unidentified."""

    def __init__(self, zeta: float, message: str = ""):
        self.zeta = zeta
        msg = f"threshold {zeta!r} leaves a covariate side empty"
        if message:
            msg = f"{msg}: {message}"
        super().__init__(msg)


class NumericalError(ExpavgError, RuntimeError):
    """Base class for numerical failures."""


class SingularVarianceError(NumericalError):
    """A variance matrix stayed singular after the ridge policy."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        msg = f"singular variance matrix at grid index {index}"
        if message:
            msg = f"{msg}: {message}"
        super().__init__(msg)


class AlignmentError(ExpavgError, ValueError):
    """Curve, prior, or kernel grids do not line up."""


class OptimizerInconsistencyError(NumericalError):
    """An alternative fit fell below the null fit beyond tolerance."""


class InsufficientDrawsError(ExpavgError, ValueError):
    """Fewer than two usable bootstrap draws."""


class BootstrapInstabilityError(NumericalError):
    """More than the tolerated fraction of bootstrap refits failed."""


class BandwidthFailureError(NumericalError):
    """Kernel smoother denominator stayed degenerate after widening."""


class KernelError(NumericalError):
    """Covariance kernel is not positive semidefinite within jitter."""
