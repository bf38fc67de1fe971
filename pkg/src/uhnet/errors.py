"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything else -> 1.
"""


class UHNetError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(UHNetError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(UHNetError):
    """Invalid model, block, or run configuration."""


class DataError(UHNetError):
    """Unreadable, malformed, or mismatched input data."""


class CheckpointError(ConfigError):
    """Corrupt checkpoint or checkpoint/model mismatch."""


class GradientError(UHNetError):
    """Autodiff misuse (backward without a recorded forward) or bad gradients."""
