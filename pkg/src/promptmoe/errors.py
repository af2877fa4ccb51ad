"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when array dimensions are inconsistent with an operation."""


class DomainError(ValueError):
    """Raised when a value leaves the valid domain (NaN/Inf, bad scalar range)."""


class ConfigError(ValueError):
    """Raised for invalid experiment configuration files or values."""


class FitError(RuntimeError):
    """Raised when every optimization restart fails; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
