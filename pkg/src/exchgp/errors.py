"""Exception hierarchy shared across the package."""


class ExchGPError(Exception):
    """Base class for all package errors."""


class ConfigError(ExchGPError, ValueError):
    """Invalid run configuration or model specification."""


class PanelDataError(ExchGPError, ValueError):
    """Malformed or inconsistent panel data."""


class NumericalError(ExchGPError, ArithmeticError):
    """A covariance matrix could not be factorized or produced non-finite values."""


class FitError(NumericalError):
    """Hyperparameter optimization failed for every initialization."""


class PipelineError(ExchGPError, RuntimeError):
    """Too many per-unit runs failed in a batch pipeline."""
