"""Exception hierarchy shared by every module."""


class ItocapError(Exception):
    """Base class for all library errors."""


class DomainError(ItocapError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class NumericalError(ItocapError, RuntimeError):
    """A numerical procedure failed to converge or produced an unusable result."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SchemaError(ItocapError, ValueError):
    """A configuration document violates its schema.

    ``path`` names the offending field, e.g. ``set.primitives[2].radius``.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
