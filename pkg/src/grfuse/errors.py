"""Exception hierarchy shared across the package."""


class GrfuseError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(GrfuseError, ValueError):
    """Shapes or channel counts do not line up."""


class NumericError(GrfuseError, ArithmeticError):
    """Non-finite values or numerically hopeless inputs."""


class DecompositionError(NumericError):
    """An eigen/QR factorization failed to converge."""


class RankError(NumericError):
    """Input lost the full column rank a layer requires."""


class DegenerateSampleError(GrfuseError, ValueError):
    """Too few samples to form a covariance."""


class FormatError(GrfuseError, ValueError):
    """A file does not follow its binary/text format."""


class ConfigError(GrfuseError, ValueError):
    """Bad key or unparsable value in a run configuration."""


class DataError(GrfuseError, ValueError):
    """Training/evaluation data is missing or inconsistent."""
