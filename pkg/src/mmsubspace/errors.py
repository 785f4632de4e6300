"""Exception types raised across the package."""


class DimensionError(ValueError):
    """A vector or operator has the wrong size."""

    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected size {expected}, got {actual}")


class ConfigurationError(ValueError):
    """Invalid geometry, parameters or problem setup."""


class UnsupportedOperation(TypeError):
    """The requested operation is not defined for this object (e.g. the
    derivative of a non-differentiable potential)."""


class SolverError(RuntimeError):
    """The iteration produced a non-finite objective or iterate."""


class PGMError(ValueError):
    """Malformed or unsupported PGM file."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")
