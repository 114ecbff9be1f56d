"""Exception hierarchy shared across the package.

Every error raised on a contract violation derives from PowerIdError so
callers (and the CLI) can map failures onto exit codes without matching
on message text.
"""

from __future__ import annotations


class PowerIdError(Exception):
    """Base class for all package-specific failures."""


# ---- input / validation failures ----


class MalformedHeader(PowerIdError):
    """Trace CSV header does not match the required column layout."""


class NonMonotonicTime(PowerIdError):
    """Sample timestamps are not strictly increasing."""


class NonFiniteValue(PowerIdError):
    """A NaN or infinity was found where a finite value is required."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class DimensionMismatch(PowerIdError):
    """Array shapes or unit counts disagree."""


class TooFewSamples(PowerIdError):
    """Operation needs more samples than the dataset provides."""


class MissingGroundTruth(PowerIdError):
    """Per-unit power ground truth is required but absent."""


class LengthMismatch(PowerIdError):
    """Paired series have different lengths."""


class ConfigError(PowerIdError):
    """Experiment configuration is missing, malformed, or inconsistent."""


# ---- numeric failures ----


class UnstableModel(PowerIdError):
    """Thermal propagation matrix has spectral radius >= 1."""


class SingularB(PowerIdError):
    """Power-to-temperature matrix is singular beyond repair."""


class RankDeficient(PowerIdError):
    """Regression matrix is rank deficient; carries the condition number."""

    def __init__(self, message: str, condition_number: float | None = None):
        super().__init__(message)
        self.condition_number = condition_number


class DivergenceDetected(PowerIdError):
    """Alternating estimation objective increased instead of decreasing."""


class NonFiniteLoss(PowerIdError):
    """Training loss became NaN or infinite."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UnevaluatedIndividual(PowerIdError):
    """Search individual used before its objectives were computed."""
