"""Exception hierarchy shared across the package.

``ValueError`` is used for plain bad arguments; the classes below mark
conditions that callers (notably the CLI) need to tell apart.
"""


class SalmapError(Exception):
    """Base class for package-specific failures."""


class DataError(SalmapError):
    """Unreadable, malformed, or inconsistent input data."""


class ModelError(SalmapError):
    """Invalid, unfitted, or corrupted model state."""


class FitError(ModelError):
    """Fitting could not proceed (too few samples, degenerate inputs)."""


class BundleTruncatedError(ModelError):
    """Serialized model ends before the section table says it should."""


class BundleChecksumError(ModelError):
    """A bundle section does not match its recorded checksum."""


class BundleVersionError(ModelError):
    """Bundle was written by a newer format revision than we can read."""


class UndefinedMetricError(DataError):
    """A metric has no defined value for the given inputs."""
