"""Exception types raised across the package.

The CLI maps each class to a distinct exit code.
"""


class IntegratedCellError(Exception):
    exit_code = 1


class ShapeError(IntegratedCellError, ValueError):
    """Tensor or architecture shapes are incompatible."""

    exit_code = 4


class LabelError(IntegratedCellError, ValueError):
    """A structure label is outside 1..K (or 1..K+1 where allowed)."""

    exit_code = 4


class ImageError(IntegratedCellError, ValueError):
    """An image is empty, corrupt, or has non-finite pixels."""

    exit_code = 4


class ConfigError(IntegratedCellError, ValueError):
    exit_code = 2


class CheckpointError(IntegratedCellError):
    """Checkpoint missing, unreadable, or inconsistent with the run config."""

    exit_code = 3


class TrainingError(IntegratedCellError, RuntimeError):
    """Training produced a non-finite loss or was given unusable data."""

    exit_code = 5


class InputError(IntegratedCellError):
    """A required input (corpus, image file) does not exist."""

    exit_code = 6
