"""Exception hierarchy. Messages are prefixed with the owning module."""


class MusenseError(Exception):
    module = "musense"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ValidationError(MusenseError, ValueError):
    module = "geometry"

    def __init__(self, field, message, module=None):
        self.field = field
        if module is not None:
            self.module = module
        super().__init__(f"{field}: {message}")


class ConfigurationError(MusenseError, ValueError):
    module = "config"


class MeshingError(MusenseError):
    module = "mesh"


class AssemblyError(MusenseError):
    module = "fem"


class SolverError(MusenseError):
    module = "fem"

    def __init__(self, message, step=None, residual=None):
        self.step = step
        self.residual = residual
        super().__init__(message)


class EnumerationError(MusenseError, ValueError):
    module = "candidates"


class ComparisonError(MusenseError, ValueError):
    module = "deviation"


class SearchError(MusenseError):
    module = "search"


class ArtifactIOError(MusenseError, OSError):
    module = "io"
