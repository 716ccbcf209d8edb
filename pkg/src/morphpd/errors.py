"""Exception hierarchy shared by the solver modules."""


class MorphPDError(Exception):
    """Base class for all package errors."""


class ParameterError(MorphPDError, ValueError):
    """An argument is outside its admissible range."""


class GeometryError(MorphPDError):
    """Mesh geometry is invalid or an operation cannot be resolved onto it."""


class MeshParseError(MorphPDError):
    """A mesh file does not follow the expected text format."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CalibrationError(MorphPDError):
    """The bond model cannot represent the requested elastic constants."""


class AssemblyError(MorphPDError):
    """An operator could not be built or updated consistently."""


class BindingError(MorphPDError):
    """A load or boundary selector resolved to an empty set."""


class ConsistencyError(MorphPDError):
    """Internal state went out of sync (dimensions, bond bookkeeping)."""


class SingularMassError(MorphPDError):
    """A lumped mass entry is zero, so the explicit update is undefined."""


class InstabilityError(MorphPDError):
    """The explicit integration diverged."""


class ConfigError(MorphPDError):
    """A scenario configuration is incomplete or violates a constraint."""
