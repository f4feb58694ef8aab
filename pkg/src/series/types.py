"""Core series types: a contiguous traffic series and its daily decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

DEFAULT_SLOT = timedelta(minutes=15)


class Direction(str, Enum):
    """Link direction the traffic volumes were measured on."""

    DOWNLINK = "downlink"
    UPLINK = "uplink"


def _frozen_array(values: np.ndarray | list[float]) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TrafficSeries:
    """Uniformly sampled traffic volumes with no gaps.

    Values are stored as a read-only float array. Negative values are
    allowed so that aperiodic residuals can reuse this type; raw ingestion
    rejects them separately.
    """

    start_time: datetime
    values: np.ndarray
    slot_width: timedelta = DEFAULT_SLOT
    direction: Direction = Direction.DOWNLINK

    def __post_init__(self) -> None:
        values = _frozen_array(self.values)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("a traffic series needs at least one value")
        if not np.all(np.isfinite(values)):
            raise ValueError("traffic values must be finite")
        if self.slot_width <= timedelta(0):
            raise ValueError(f"slot width must be positive, got {self.slot_width}")
        start = self.start_time
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start_time", start)
        object.__setattr__(self, "direction", Direction(self.direction))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def slots_per_day(self) -> int:
        """Number of slots in one day (96 for 15-minute slots)."""
        ratio = timedelta(days=1) / self.slot_width
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"slot width {self.slot_width} does not divide a day")
        return int(round(ratio))

    def timestamps(self) -> pd.DatetimeIndex:
        """Timestamp of every slot."""
        return pd.date_range(self.start_time, periods=len(self), freq=self.slot_width)

    def timestamp_at(self, index: int) -> datetime:
        return self.start_time + index * self.slot_width

    def with_values(self, values: np.ndarray) -> TrafficSeries:
        """Same calendar placement, different values."""
        return TrafficSeries(self.start_time, values, self.slot_width, self.direction)

    def slice(self, start: int, stop: int | None = None) -> TrafficSeries:
        stop = len(self) if stop is None else stop
        if not 0 <= start < stop <= len(self):
            raise ValueError(f"slice [{start}, {stop}) outside series of length {len(self)}")
        return TrafficSeries(
            self.timestamp_at(start), self.values[start:stop], self.slot_width, self.direction
        )

    def to_csv(self, path: str | Path) -> None:
        """Write ``timestamp,value`` rows with RFC-3339 timestamps."""
        frame = pd.DataFrame(
            {
                "timestamp": [t.isoformat() for t in self.timestamps()],
                "value": self.values,
            }
        )
        frame.to_csv(path, index=False)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Daily periodic baseline plus the aperiodic residual it leaves behind.

    ``values[i] == baseline[(i + offset) % S] + residual.values[i]`` for every
    index. ``offset`` is the slot of day, in baseline terms, of index 0.
    """

    baseline: np.ndarray
    residual: TrafficSeries
    offset: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "baseline", _frozen_array(self.baseline))

    @property
    def slots_per_day(self) -> int:
        return int(self.baseline.size)

    def baseline_at(self, index: int | np.ndarray) -> float | np.ndarray:
        """Baseline value for an absolute slot index (any index, not only in range)."""
        return self.baseline[(np.asarray(index) + self.offset) % self.slots_per_day]

    def tiled(self, length: int) -> np.ndarray:
        """Baseline repeated over ``length`` slots starting at index 0."""
        return self.baseline_at(np.arange(length))

    def recompose(self) -> np.ndarray:
        """Reconstruct the raw values."""
        return self.tiled(len(self.residual)) + self.residual.values
