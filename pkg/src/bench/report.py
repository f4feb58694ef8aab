"""Report files of an evaluation run, and re-rendering them from stored forecasts.

Layout of an output directory:
    config.yaml              resolved run configuration
    eval_<method>.json       EvalReport
    forecasts_<method>.csv   index,actual,map_forecast,prob_below,prob_above
    forecasts_<method>.jsonl one forecast record per step
    ace_curves.csv           step,<method>... cumulative error curves
    summary.md               human-readable table
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd
import yaml

from src.bench.metrics import AVERAGE, SPIKE, EvalReport, segment_spikes
from src.config import Method, RunConfig, dump_config
from src.templates import MethodRow, SummaryVars, render_summary

logger = logging.getLogger(__name__)

METHOD_ORDER = [m.value for m in Method]


def _ordered(reports: Mapping[str, EvalReport]) -> list[EvalReport]:
    return sorted(reports.values(), key=lambda r: METHOD_ORDER.index(r.method))


def forecast_frame(report: EvalReport) -> pd.DataFrame:
    rows = []
    for rec in report.forecasts:
        first = rec["risk"][0] if rec.get("risk") else {}
        rows.append(
            {
                "index": rec["index"],
                "actual": rec.get("actual"),
                "map_forecast": rec["forecast"],
                "prob_below": first.get("prob_below"),
                "prob_above": first.get("prob_above"),
            }
        )
    return pd.DataFrame(rows, columns=["index", "actual", "map_forecast", "prob_below", "prob_above"])


def curve_frame(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    ordered = _ordered(reports)
    steps = max((r.ace_curve.size for r in ordered), default=0)
    frame = pd.DataFrame({"step": np.arange(1, steps + 1)})
    for r in ordered:
        frame[r.method] = r.ace_curve
    return frame


def summary_vars(
    reports: Mapping[str, EvalReport], config: RunConfig, test_start: int, test_end: int
) -> SummaryVars:
    ordered = _ordered(reports)
    spike_segments = sum(s.label == SPIKE for s in ordered[0].segments) if ordered else 0
    source = str(config.data) if config.data is not None else f"synthetic (seed {config.synthetic.seed})"
    return SummaryVars(
        title=f"Rolling one-step evaluation: {source}",
        methods=[
            MethodRow(
                method=r.method,
                ace_total=r.ace_total,
                ace_spike=r.segment_aces.get(SPIKE, 0.0),
                ace_average=r.segment_aces.get(AVERAGE, 0.0),
                causality_ok=r.causality_ok,
            )
            for r in ordered
        ],
        test_start=test_start,
        test_end=test_end,
        spike_segments=spike_segments,
        settings={
            "xi": config.xi,
            "max_size": config.max_size,
            "extreme_keep_fraction": config.extreme_keep_fraction,
            "refit_every": config.refit_every,
            "sarima": str(config.sarima),
            "seed": config.seed,
        },
    )


def write_reports(
    reports: Mapping[str, EvalReport], config: RunConfig, test_start: int, test_end: int
) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.yaml")
    for r in _ordered(reports):
        with open(out / f"eval_{r.method}.json", "w", encoding="utf-8") as f:
            json.dump(r.to_dict(), f, indent=2)
        forecast_frame(r).to_csv(out / f"forecasts_{r.method}.csv", index=False)
        with open(out / f"forecasts_{r.method}.jsonl", "w", encoding="utf-8") as f:
            for rec in r.forecasts:
                f.write(json.dumps(rec) + "\n")
    curve_frame(reports).to_csv(out / "ace_curves.csv", index=False)
    (out / "summary.md").write_text(
        render_summary(summary_vars(reports, config, test_start, test_end)), encoding="utf-8"
    )
    logger.info("Wrote reports for %s to %s", [r.method for r in _ordered(reports)], out)
    return out


def load_forecasts(output_dir: str | Path) -> dict[str, list[dict[str, Any]]]:
    """Stored per-step forecast records keyed by method."""
    out = Path(output_dir)
    loaded: dict[str, list[dict[str, Any]]] = {}
    for method in METHOD_ORDER:
        path = out / f"forecasts_{method}.jsonl"
        if path.exists():
            with open(path, encoding="utf-8") as f:
                loaded[method] = [json.loads(line) for line in f if line.strip()]
    if not loaded:
        raise FileNotFoundError(f"no forecasts_<method>.jsonl files in {out}")
    return loaded


def rerender(output_dir: str | Path) -> dict[str, EvalReport]:
    """Rebuild every report in ``output_dir`` from its stored forecasts and config."""
    out = Path(output_dir)
    with open(out / "config.yaml", encoding="utf-8") as f:
        stored = yaml.safe_load(f)
    stored["output_dir"] = str(out)
    config = RunConfig.model_validate(stored)

    reports: dict[str, EvalReport] = {}
    for method, records in load_forecasts(out).items():
        start = records[0]["index"]
        previous: dict[str, Any] = {}
        eval_path = out / f"eval_{method}.json"
        if eval_path.exists():
            with open(eval_path, encoding="utf-8") as f:
                previous = json.load(f)
        segments = segment_spikes([r["residual_actual"] for r in records], config.xi, config.segment_pad)
        reports[method] = EvalReport.build(
            method,
            np.array([r["forecast"] for r in records]),
            np.array([r["actual"] for r in records]),
            segments,
            records,
            previous.get("max_index_read", []),
            start_index=start,
            meta=previous.get("meta"),
        )
    end = start + len(records)
    write_reports(reports, config, start, end)
    return reports
