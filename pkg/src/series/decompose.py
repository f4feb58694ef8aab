"""Daily-periodic / aperiodic split of a traffic series.

The periodic baseline is the per-slot-of-day mean over complete days, i.e.
the period-S mean component of the series. An incomplete trailing day does
not contribute to the baseline but still receives a residual.
"""

from __future__ import annotations

import logging
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import InsufficientHistoryError
from src.series.types import Decomposition, TrafficSeries

logger = logging.getLogger(__name__)


def decompose(series: TrafficSeries) -> Decomposition:
    """Estimate the daily baseline from ``series`` and return baseline + residual."""
    slots = series.slots_per_day
    days = len(series) // slots
    if days < 1:
        raise InsufficientHistoryError(
            f"decomposition needs at least one full day ({slots} slots), got {len(series)}"
        )
    complete = series.values[: days * slots].reshape(days, slots)
    baseline = complete.mean(axis=0)
    logger.debug("Baseline estimated from %d complete day(s)", days)
    return extend_residual(series, baseline)


def extend_residual(series: TrafficSeries, baseline: np.ndarray, offset: int = 0) -> Decomposition:
    """Residual of ``series`` under a fixed, previously estimated baseline.

    Index 0 of ``series`` falls on baseline slot ``offset``.
    """
    baseline = np.asarray(baseline, dtype=float)
    if baseline.size != series.slots_per_day:
        raise ValueError(
            f"baseline has {baseline.size} entries, series has {series.slots_per_day} slots/day"
        )
    offset = int(offset) % baseline.size
    tiled = baseline[(np.arange(len(series)) + offset) % baseline.size]
    residual = series.with_values(series.values - tiled)
    return Decomposition(baseline=baseline, residual=residual, offset=offset)


def slots_since(series: TrafficSeries, reference_start: datetime) -> int:
    """Whole slots from ``reference_start`` to index 0 of ``series`` (negative if earlier).

    Raises:
        ValueError: the series start is not on the reference's slot grid.
    """
    if reference_start.tzinfo is None:
        reference_start = reference_start.replace(tzinfo=timezone.utc)
    slots = (series.start_time - reference_start) / series.slot_width
    if abs(slots - round(slots)) > 1e-9:
        raise ValueError(
            f"series start {series.start_time.isoformat()} is off the slot grid of "
            f"{reference_start.isoformat()} ({series.slot_width} slots)"
        )
    return int(round(slots))


def write_decomposition_csv(
    path: str | Path, series: TrafficSeries, decomposition: Decomposition
) -> None:
    """Write ``timestamp,raw,baseline,residual`` rows."""
    frame = pd.DataFrame(
        {
            "timestamp": [t.isoformat() for t in series.timestamps()],
            "raw": series.values,
            "baseline": decomposition.tiled(len(series)),
            "residual": decomposition.residual.values,
        }
    )
    frame.to_csv(path, index=False)
    logger.info("Wrote decomposition of %d slots to %s", len(series), path)
