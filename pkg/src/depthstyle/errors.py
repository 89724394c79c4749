"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value or unknown layer/backend name."""


class SetupError(RuntimeError):
    """A required external asset (pretrained weights, dataset) is missing.

    The message always includes instructions for fetching the asset.
    """


class ArchiveError(RuntimeError):
    """Model/checkpoint archive is unreadable, truncated or incomplete."""


class ArchiveVersionError(ArchiveError):
    """Archive was written with an unsupported format version."""


class NumericalError(RuntimeError):
    """Non-finite values appeared where finite ones are required."""
