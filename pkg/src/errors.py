"""Exception types raised across the forecasting pipeline.

Each type derives from a built-in so callers can catch either the specific
condition or the generic ValueError / RuntimeError.
"""

from __future__ import annotations

from datetime import datetime


class IngestError(ValueError):
    """A traffic CSV could not be turned into a contiguous series."""

    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class GapError(IngestError):
    """Consecutive timestamps are more than one slot apart."""

    def __init__(self, row: int, missing: datetime) -> None:
        self.missing = missing
        super().__init__(f"gap in series, missing slot at {missing.isoformat()}", row=row)


class InsufficientHistoryError(ValueError):
    """An operation needs more past values than were supplied."""


class EmptyCategoryError(ValueError):
    """Relief weighting needs at least one extreme and one typical point."""


class CovarianceError(RuntimeError):
    """The regularised covariance could not be factorised even at maximum jitter."""


class FitError(RuntimeError):
    """Parameter estimation failed (every restart failed, or no convergence)."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries enough context for a one-line diagnostic."""

    def __init__(
        self,
        stage: str,
        cause: BaseException,
        method: str | None = None,
        step: int | None = None,
    ) -> None:
        self.stage = stage
        self.method = method
        self.step = step
        self.cause = cause
        where = stage
        if method:
            where = f"{method}/{stage}"
        if step is not None:
            where = f"{where} at step {step}"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
