"""Traffic series: ingestion, daily decomposition, and synthetic generation."""

from src.series.decompose import decompose, extend_residual, slots_since, write_decomposition_csv
from src.series.ingest import ingest_csv
from src.series.synth import (
    SyntheticEvent,
    SyntheticSpec,
    diurnal_profile,
    load_synthetic_spec,
    synthesize,
    synthesize_with_events,
)
from src.series.types import DEFAULT_SLOT, Decomposition, Direction, TrafficSeries

__all__ = [
    "DEFAULT_SLOT",
    "Decomposition",
    "Direction",
    "SyntheticEvent",
    "SyntheticSpec",
    "TrafficSeries",
    "decompose",
    "diurnal_profile",
    "extend_residual",
    "ingest_csv",
    "load_synthetic_spec",
    "slots_since",
    "synthesize",
    "synthesize_with_events",
    "write_decomposition_csv",
]
