"""Exception types raised across the package."""


class FVHeatError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(FVHeatError, ValueError):
    pass


class MeshValidationError(FVHeatError, ValueError):
    """A mesh violates one of its structural invariants."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class MeshParseError(FVHeatError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GenerationFailedError(FVHeatError, RuntimeError):
    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class AssemblyError(FVHeatError, ValueError):
    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class NumericalError(FVHeatError, RuntimeError):
    """An iterative method failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
