"""Exception types shared across the package.

Exit-code mapping for the CLI lives in cli.py; these classes only carry
the failure category.
"""


class GgceError(Exception):
    """Base class for package-specific failures."""


class ConfigError(GgceError):
    """Invalid or unparseable experiment configuration."""


class DataFormatError(GgceError):
    """Malformed binary container or inconsistent record contents.

    Carries the byte offset of the first bad record when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericFailure(GgceError):
    """A numeric contract was violated (non-finite values, failed solve)."""


class TrainingDivergence(NumericFailure):
    """Loss became non-finite during optimization."""


class InsufficientHistoryError(GgceError):
    """Not enough measured states to fit the temporal model."""


class NotFittedError(GgceError, ValueError):
    """Predict was called on a prior model that has not been fit."""


class NoSolutionError(GgceError):
    """Geometry admits no consistent solution (e.g. delay shorter than LoS)."""
