"""Evaluation harness: rolling forecasts, ACE scoring and report files."""

from src.bench.metrics import EvalReport, Segment, ace, ace_curve, segment_spikes
from src.bench.report import load_forecasts, rerender, write_reports
from src.bench.runner import (
    CausalAccessor,
    PreparedData,
    TrainedMethod,
    evaluate,
    forecast_next,
    prepare,
    run,
    run_async,
    train,
)

__all__ = [
    "CausalAccessor",
    "EvalReport",
    "PreparedData",
    "Segment",
    "TrainedMethod",
    "ace",
    "ace_curve",
    "evaluate",
    "forecast_next",
    "load_forecasts",
    "prepare",
    "rerender",
    "run",
    "run_async",
    "segment_spikes",
    "train",
    "write_reports",
]
