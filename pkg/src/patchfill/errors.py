"""Exception hierarchy shared across the package."""


class PatchfillError(Exception):
    """Base class for all patchfill errors."""


class DimensionError(PatchfillError):
    """Shapes or resolutions of inputs do not line up."""


class DomainError(PatchfillError):
    """An input value is outside the operation's domain (e.g. pixel outside rect)."""


class ConfigError(PatchfillError):
    """Invalid configuration value or malformed config document."""


class DataError(PatchfillError):
    """Dataset, manifest or pair-list problems (missing files, bad layout, ...)."""


class StateError(PatchfillError):
    """Operation called in an invalid state (missing checkpoint, diverged run, ...)."""


class CheckpointError(PatchfillError):
    """Checkpoint file corrupt, truncated or of an unsupported version."""


class UsageError(PatchfillError):
    """Bad command-line usage (malformed flags, out-of-bound rects, ...)."""
