"""Seeded generator of spiky synthetic traffic.

Stands in for measured base-station data: a smooth diurnal profile, Gaussian
noise, and Poisson-placed events that follow an onset/decay template (the
shape of a typical event flow). Troughs reuse the template negated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.series.types import TrafficSeries

logger = logging.getLogger(__name__)


class SyntheticSpec(BaseModel):
    """Parameters of a synthetic traffic series. Same spec, same series."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    days: int = Field(14, gt=0)
    slots_per_day: int = Field(96, gt=0)
    slot_minutes: float = Field(15.0, gt=0)
    start_time: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc)
    base_level: float = Field(100.0, description="Mean traffic level of the diurnal profile")
    amplitude: float = Field(40.0, ge=0, description="First-harmonic amplitude of the daily cycle")
    phase: float = Field(1.9, description="First-harmonic phase in radians")
    amplitude2: float = Field(0.0, ge=0, description="Second-harmonic amplitude")
    phase2: float = 0.0
    noise_std: float = Field(3.0, ge=0)
    spike_rate: float = Field(2.0, ge=0, description="Expected spike events per day")
    spike_scale: float = Field(60.0, ge=0, description="Height multiplier of the spike template")
    spike_template: tuple[float, ...] = (0.5, 1.0, 0.8, 0.55, 0.35, 0.2)
    trough_rate: float = Field(0.5, ge=0, description="Expected trough events per day")
    trough_scale: float = Field(30.0, ge=0)

    @model_validator(mode="after")
    def _check_day(self) -> SyntheticSpec:
        if abs(self.slots_per_day * self.slot_minutes - 1440.0) > 1e-9:
            raise ValueError("slots_per_day * slot_minutes must equal 1440")
        if not self.spike_template:
            raise ValueError("spike_template must not be empty")
        return self


@dataclass(frozen=True)
class SyntheticEvent:
    """One injected event: where it starts and where its template peaks."""

    kind: str  # "spike" or "trough"
    onset: int
    peak: int


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    """Load a SyntheticSpec from YAML."""
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    return SyntheticSpec.model_validate(data)


def diurnal_profile(spec: SyntheticSpec) -> np.ndarray:
    """Noise-free per-slot daily profile (length ``slots_per_day``)."""
    x = 2.0 * np.pi * np.arange(spec.slots_per_day) / spec.slots_per_day
    return (
        spec.base_level
        + spec.amplitude * np.sin(x - spec.phase)
        + spec.amplitude2 * np.sin(2.0 * x - spec.phase2)
    )


def synthesize_with_events(spec: SyntheticSpec) -> tuple[TrafficSeries, tuple[SyntheticEvent, ...]]:
    """Generate the series together with the log of injected events."""
    rng = np.random.default_rng(spec.seed)
    n = spec.days * spec.slots_per_day
    values = np.tile(diurnal_profile(spec), spec.days)
    values = values + rng.normal(0.0, spec.noise_std, size=n)

    template = np.asarray(spec.spike_template, dtype=float)
    events: list[SyntheticEvent] = []
    for kind, rate, scale in (
        ("spike", spec.spike_rate, spec.spike_scale),
        ("trough", spec.trough_rate, -spec.trough_scale),
    ):
        count = int(rng.poisson(rate * spec.days)) if rate > 0 else 0
        for onset in np.sort(rng.integers(0, n, size=count)):
            onset = int(onset)
            stop = min(n, onset + template.size)
            shape = template[: stop - onset]
            values[onset:stop] += scale * shape
            events.append(SyntheticEvent(kind, onset, onset + int(np.argmax(np.abs(shape)))))

    np.maximum(values, 0.0, out=values)
    series = TrafficSeries(
        start_time=spec.start_time,
        values=values,
        slot_width=timedelta(minutes=spec.slot_minutes),
    )
    logger.info(
        "Synthesized %d slots (%d spikes, %d troughs, seed %d)",
        n,
        sum(e.kind == "spike" for e in events),
        sum(e.kind == "trough" for e in events),
        spec.seed,
    )
    return series, tuple(events)


def synthesize(spec: SyntheticSpec) -> TrafficSeries:
    """Generate a synthetic traffic series; a pure function of ``spec``."""
    series, _ = synthesize_with_events(spec)
    return series
