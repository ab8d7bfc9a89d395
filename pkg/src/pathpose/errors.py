"""Exception hierarchy shared by all pathpose modules."""


class PathPoseError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PathPoseError, ValueError):
    """Invalid or inconsistent configuration."""


class InputError(PathPoseError, ValueError):
    """Invalid data handed to an operation (non-finite, wrong shape, empty...)."""


class DomainError(InputError):
    """Value outside the domain of a mapping (e.g. latent outside [-1, 1])."""


class ValidationError(InputError):
    """A record violates a dataset invariant."""


class FormatError(PathPoseError, ValueError):
    """Malformed or unsupported file content."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class VersionError(FormatError):
    """File declares a format version this build cannot read."""


class DegenerateRotationError(PathPoseError, ArithmeticError):
    """A rotated point landed on or behind the camera plane."""


class UndefinedCorrelationError(PathPoseError, ArithmeticError):
    """Correlation requested for a constant series."""


class InsufficientCoverageError(InputError):
    """Some depth bins were visited too rarely to measure spread."""

    def __init__(self, bins, min_visits):
        super().__init__(
            f"depth bins {sorted(bins)} have fewer than {min_visits} visits"
        )
        self.bins = sorted(bins)
