"""Absolute cumulative error and spike/average segmentation of a test span."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np

from src.features.relief import tag_categories

SPIKE = "spike"
AVERAGE = "average"


def ace(
    forecasts: np.ndarray | Sequence[float],
    actuals: np.ndarray | Sequence[float],
    start: int = 0,
    end: int | None = None,
) -> float:
    """Sum of |forecast - actual| over indices start..end inclusive."""
    f = np.asarray(forecasts, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if f.shape != a.shape or f.ndim != 1:
        raise ValueError(f"forecasts {f.shape} and actuals {a.shape} must be equal-length vectors")
    end = f.size - 1 if end is None else end
    if not 0 <= start <= end < f.size:
        raise ValueError(f"range [{start}, {end}] outside 0..{f.size - 1}")
    return float(np.sum(np.abs(f[start : end + 1] - a[start : end + 1])))


def ace_curve(forecasts: np.ndarray | Sequence[float], actuals: np.ndarray | Sequence[float]) -> np.ndarray:
    """Running ACE after every step."""
    return np.cumsum(np.abs(np.asarray(forecasts, dtype=float) - np.asarray(actuals, dtype=float)))


class Segment(NamedTuple):
    """Labelled inclusive index range within the evaluation span."""

    label: str
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start + 1

    def contains(self, index: int) -> bool:
        return self.start <= index <= self.end


def segment_spikes(
    actuals: np.ndarray | Sequence[float], xi: float, pad: int = 2
) -> list[Segment]:
    """Partition the span into maximal padded runs around extreme points and the rest."""
    values = np.asarray(actuals, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("cannot segment an empty span")
    spiky = np.zeros(n, dtype=bool)
    if n >= 3:
        for tag in tag_categories(values, xi):
            if tag.is_extreme:
                spiky[max(tag.index - pad, 0) : min(tag.index + pad, n - 1) + 1] = True

    segments: list[Segment] = []
    start = 0
    for i in range(1, n + 1):
        if i == n or spiky[i] != spiky[start]:
            segments.append(Segment(SPIKE if spiky[start] else AVERAGE, start, i - 1))
            start = i
    return segments


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Rolling-evaluation outcome of one method."""

    method: str
    ace_curve: np.ndarray
    segments: tuple[Segment, ...]
    segment_aces: dict[str, float]
    forecasts: tuple[dict[str, Any], ...] = ()
    max_index_read: tuple[int, ...] = ()
    causality_ok: bool = True
    start_index: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def ace_total(self) -> float:
        return float(self.ace_curve[-1]) if self.ace_curve.size else 0.0

    @classmethod
    def build(
        cls,
        method: str,
        forecasts: np.ndarray,
        actuals: np.ndarray,
        segments: Sequence[Segment],
        records: Sequence[dict[str, Any]] = (),
        max_index_read: Sequence[int] = (),
        start_index: int = 0,
        meta: dict[str, Any] | None = None,
    ) -> EvalReport:
        per_label: dict[str, float] = {SPIKE: 0.0, AVERAGE: 0.0}
        for seg in segments:
            per_label[seg.label] += ace(forecasts, actuals, seg.start, seg.end)
        reads = tuple(int(m) for m in max_index_read)
        ok = all(m < start_index + step for step, m in enumerate(reads))
        return cls(
            method=method,
            ace_curve=ace_curve(forecasts, actuals),
            segments=tuple(segments),
            segment_aces=per_label,
            forecasts=tuple(records),
            max_index_read=reads,
            causality_ok=ok,
            start_index=start_index,
            meta=dict(meta or {}),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "ace_total": self.ace_total,
            "segment_aces": dict(self.segment_aces),
            "segments": [
                {"label": s.label, "start": s.start + self.start_index, "end": s.end + self.start_index}
                for s in self.segments
            ],
            "causality_ok": self.causality_ok,
            "max_index_read": list(self.max_index_read),
            "ace_curve": [float(x) for x in self.ace_curve],
            "meta": self.meta,
        }
