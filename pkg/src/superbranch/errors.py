"""Exception hierarchy shared by all superbranch modules."""


class SuperbranchError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(SuperbranchError):
    """A model object is structurally malformed (shapes, NaNs, bad kinds)."""


class ConfigError(SuperbranchError):
    """A config file failed to parse or violated the JSON schema."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(message)
        self.pointer = pointer


class ValidationError(SuperbranchError):
    """A model failed one of the admissibility conditions.

    Carries the full ValidationReport so callers can inspect which
    condition failed and with what constant.
    """

    def __init__(self, report):
        super().__init__("model validation failed: " + report.summary())
        self.report = report


class RefusalError(SuperbranchError):
    """An operation refused to run because a precondition certificate is missing."""


class NotSubcriticalError(RefusalError):
    """Subcriticality could not be certified for the model.

    ``spectral_abscissa`` records the decisive eigenvalue bound when known.
    """

    def __init__(self, message: str, spectral_abscissa: float = float("nan")):
        super().__init__(message)
        self.spectral_abscissa = spectral_abscissa


class SolverError(SuperbranchError):
    """The ODE integration failed (step underflow, blow-up, excessive clamping).

    ``diagnostics`` is a small dict with the failing time, state norm, etc.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
