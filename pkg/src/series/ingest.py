"""CSV ingestion of raw traffic series.

Accepts a ``timestamp,value`` file whose timestamps are either RFC-3339
strings or epoch seconds; the format is decided once per file from the first
data row. Gaps are rejected rather than imputed so that lag features always
refer to the slot they claim to.
"""

from __future__ import annotations

import logging
from datetime import timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import GapError, IngestError
from src.series.types import DEFAULT_SLOT, Direction, TrafficSeries

logger = logging.getLogger(__name__)

HEADER = ["timestamp", "value"]


def _parse_timestamps(raw: pd.Series) -> pd.Series:
    """Parse the timestamp column, epoch seconds or RFC-3339 for the whole file."""
    numeric = pd.to_numeric(raw, errors="coerce")
    if not np.isnan(numeric.iloc[0]):
        parsed = pd.to_datetime(numeric, unit="s", utc=True, errors="coerce")
    else:
        parsed = pd.to_datetime(raw, utc=True, errors="coerce", format="ISO8601")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise IngestError(f"cannot parse timestamp {raw.iloc[row]!r}", row=row)
    return parsed


def _parse_values(raw: pd.Series) -> np.ndarray:
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise IngestError(f"value {raw.iloc[row]!r} is not a finite number", row=row)
    negative = np.flatnonzero(values < 0)
    if negative.size:
        row = int(negative[0])
        raise IngestError(f"negative traffic volume {values[row]}", row=row)
    return values


def ingest_csv(
    path: str | Path,
    slot_width: timedelta = DEFAULT_SLOT,
    direction: Direction = Direction.DOWNLINK,
) -> TrafficSeries:
    """Read a traffic CSV into a contiguous TrafficSeries.

    Raises:
        IngestError: unparseable row, negative or non-finite value,
            non-increasing or misaligned timestamps. ``row`` is the 0-based
            data row index.
        GapError: two consecutive rows are more than one slot apart.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if [c.strip() for c in frame.columns[:2]] != HEADER:
        raise IngestError(f"expected header 'timestamp,value', got {list(frame.columns)}")
    frame.columns = [c.strip() for c in frame.columns]
    if frame.empty:
        raise IngestError(f"{path} has no data rows")

    stamps = _parse_timestamps(frame["timestamp"].str.strip())
    values = _parse_values(frame["value"].str.strip())

    slot_ns = int(pd.Timedelta(slot_width).value)
    ns = stamps.to_numpy(dtype="datetime64[ns]").astype(np.int64)
    steps = np.diff(ns)
    for i in np.flatnonzero(steps != slot_ns):
        row = int(i) + 1
        if steps[i] <= 0:
            raise IngestError("timestamps are not strictly increasing", row=row)
        if steps[i] > slot_ns:
            missing = (stamps.iloc[int(i)] + pd.Timedelta(slot_width)).to_pydatetime()
            raise GapError(row=row, missing=missing)
        raise IngestError(
            f"spacing {pd.Timedelta(int(steps[i]))} does not match slot width {slot_width}",
            row=row,
        )

    series = TrafficSeries(
        start_time=stamps.iloc[0].to_pydatetime(),
        values=values,
        slot_width=slot_width,
        direction=direction,
    )
    logger.info("Ingested %d slots from %s", len(series), path)
    return series
