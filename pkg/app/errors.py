"""Exception hierarchy shared by the library, the CLI and the background tasks.

Every error carries the process exit code the command line maps it to:
2 for usage and configuration problems, 3 for data problems (corpus files,
images, checkpoints) and 4 for numeric faults.
"""


class SRSError(Exception):
    """Base class for all errors raised by the sticker response selector."""

    exit_code = 1


class ConfigError(SRSError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class CorpusError(SRSError):
    """Malformed corpus record, missing image or undersized sticker pool."""

    exit_code = 3


class CheckpointError(SRSError):
    """Unreadable checkpoint or checkpoint that does not match the corpus."""

    exit_code = 3


class NumericFault(SRSError):
    """Non-finite value or failed gradient check."""

    exit_code = 4


class DimensionError(NumericFault):
    """Tensor shapes that an operation cannot combine."""


class TrainingFault(NumericFault):
    """Non-finite loss or gradient during optimisation."""
