class LyapctlError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(LyapctlError, ValueError):
    pass


class DomainError(LyapctlError, ValueError):
    """A state lies outside the box along a non-periodic coordinate."""


class AssemblyError(LyapctlError, ValueError):
    pass


class PreconditionError(LyapctlError):
    pass


class ExtractionError(LyapctlError):
    def __init__(self, cell: int, message: str | None = None):
        self.cell = cell
        super().__init__(message or f"cell {cell} has no supported action")


class CertificateError(LyapctlError):
    pass


class ConvergenceError(LyapctlError):
    def __init__(self, message: str, history=None):
        self.history = list(history or [])
        super().__init__(message)


class ConfigError(LyapctlError, ValueError):
    pass
