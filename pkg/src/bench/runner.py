"""End-to-end pipeline: prepare data, train each method, roll forecasts over the test span.

The daily baseline is estimated from the training span only and then
extended over the test span, so no test value informs the decomposition.
Methods run concurrently in worker threads; steps within a method are
sequential.
"""

from __future__ import annotations

import asyncio
import dataclasses
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np

from src.bench.metrics import EvalReport, Segment, segment_spikes
from src.bench.report import write_reports
from src.config import Method, RunConfig
from src.errors import EmptyCategoryError, StageError
from src.features.embed import FeatureScaler, FeatureVector, feature_matrix, featurize
from src.features.relief import (
    CategoryTag,
    CategoryThreshold,
    ReliefResult,
    fit_threshold,
    optimize_weights,
    uniform_weights,
)
from src.gp.kernels import KernelKind
from src.gp.model import FegpModel, TrainingWindow, fit, load_model, prune, save_model
from src.gp.posterior import (
    GaussianPosterior,
    RiskReport,
    forecast_record,
    map_point,
    predict_fegp,
    predict_naive,
    risk,
)
from src.sarima import SarimaModel, fit_sarima, forecast_one
from src.series.decompose import decompose, extend_residual, slots_since
from src.series.ingest import ingest_csv
from src.series.synth import synthesize
from src.series.types import Decomposition, TrafficSeries

logger = logging.getLogger(__name__)


@contextmanager
def stage(name: str, method: str | None = None, step: int | None = None) -> Iterator[None]:
    """Re-raise any failure inside the block as a StageError naming where it happened."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:  # pylint: disable=broad-exception-caught  # every failure becomes a stage diagnostic
        raise StageError(name, e, method=method, step=step) from e


class CausalAccessor:
    """Read-only access to a series that records the highest index touched per step."""

    def __init__(self, values: np.ndarray) -> None:
        self._values = np.asarray(values, dtype=float)
        self._step: int | None = None
        self._max_read = -1
        self.audit: dict[int, int] = {}

    def __len__(self) -> int:
        return int(self._values.size)

    def begin_step(self, t: int) -> None:
        self._step = t
        self._max_read = -1

    def read(self, start: int, stop: int) -> np.ndarray:
        if not 0 <= start <= stop <= self._values.size:
            raise IndexError(f"read [{start}, {stop}) outside series of length {self._values.size}")
        if stop > start:
            self._max_read = max(self._max_read, stop - 1)
        return self._values[start:stop].copy()

    def end_step(self) -> int:
        if self._step is None:
            raise RuntimeError("end_step without begin_step")
        self.audit[self._step] = self._max_read
        self._step = None
        return self._max_read

    @property
    def violations(self) -> list[int]:
        """Steps that read their own or a later index."""
        return [t for t, m in self.audit.items() if m >= t]


# -- data --

@dataclass(frozen=True, eq=False)
class PreparedData:
    series: TrafficSeries
    decomposition: Decomposition
    train_end: int
    test_end: int
    threshold: CategoryThreshold

    @property
    def residual(self) -> np.ndarray:
        return self.decomposition.residual.values

    @property
    def test_indices(self) -> range:
        return range(self.train_end, self.test_end)


def load_series(config: RunConfig) -> TrafficSeries:
    if config.data is not None:
        return ingest_csv(config.data, slot_width=timedelta(minutes=config.slot_minutes))
    return synthesize(config.synthetic)


def split_indices(config: RunConfig, n: int) -> tuple[int, int]:
    test_end = config.test_end if config.test_end is not None else n
    train_end = config.train_end if config.train_end is not None else test_end - config.test_length
    if not 0 < train_end < test_end <= n:
        raise ValueError(f"split train_end={train_end}, test_end={test_end} invalid for {n} values")
    return train_end, test_end


def prepare(config: RunConfig) -> PreparedData:
    series = load_series(config)
    train_end, test_end = split_indices(config, len(series))
    series = series.slice(0, test_end)
    baseline = decompose(series.slice(0, train_end)).baseline
    decomposition = extend_residual(series, baseline)
    threshold = fit_threshold(decomposition.residual.values[:train_end], config.xi)
    logger.info(
        "Prepared %d slots: train [0, %d), test [%d, %d)", len(series), train_end, train_end, test_end
    )
    return PreparedData(series, decomposition, train_end, test_end, threshold)


def training_tags(data: PreparedData) -> dict[int, CategoryTag]:
    r = data.residual
    return {i: data.threshold.tag(i, r[i] - r[i - 1]) for i in range(1, data.train_end)}


# -- training --

@dataclass(frozen=True, eq=False)
class TrainedMethod:
    method: Method
    model: FegpModel | SarimaModel
    relief: ReliefResult | None = None
    tags: dict[int, CategoryTag] = field(default_factory=dict)


def _relief(
    indices: np.ndarray, matrix: np.ndarray, tags: dict[int, CategoryTag], config: RunConfig
) -> tuple[ReliefResult | None, Any, FeatureScaler]:
    vectors = [FeatureVector(row, int(i)) for i, row in zip(indices, matrix)]
    try:
        result = optimize_weights(vectors, list(tags.values()), xi=config.xi, standardize=config.standardize)
        return result, result.weights, result.scaler
    except EmptyCategoryError as e:
        logger.warning("Relief skipped (%s); using uniform weights", e)
        scaler = FeatureScaler.fit(matrix) if config.standardize else FeatureScaler.identity(matrix.shape[1])
        return None, uniform_weights(matrix.shape[1]), scaler


def train_gp(method: Method, data: PreparedData, config: RunConfig) -> TrainedMethod:
    cfg = config.feature_config
    train_residual = data.residual[: data.train_end]
    tags = training_tags(data)
    with stage("featurize", method.value):
        indices, matrix = feature_matrix(train_residual, cfg)

    relief = None
    if method == Method.FEGP:
        with stage("relief", method.value):
            relief, weights, scaler = _relief(indices, matrix, tags, config)
        kind = KernelKind.FEATURE_EMBEDDED
    else:
        weights, scaler, kind = None, None, KernelKind.NAIVE_TIME

    window = TrainingWindow(indices, train_residual[indices], matrix)
    window = prune(window, tags.values(), config.prune_policy(method))
    with stage("fit", method.value):
        hyper = fit(window, weights, kind, config.fit_options, scaler)
    model = FegpModel(window, weights, hyper, kind, scaler, cfg)
    return TrainedMethod(method, model, relief, tags)


def train_sarima(data: PreparedData, config: RunConfig) -> TrainedMethod:
    with stage("fit", Method.SARIMA.value):
        model = fit_sarima(data.series.values[: data.train_end], config.sarima)
    return TrainedMethod(Method.SARIMA, model)


def train_method(method: Method, data: PreparedData, config: RunConfig) -> TrainedMethod:
    if method == Method.SARIMA:
        return train_sarima(data, config)
    return train_gp(method, data, config)


# -- rolling evaluation --

def risk_bands(config: RunConfig, data: PreparedData) -> Callable[[int], list[tuple[float, float]]]:
    """Raw-scale risk intervals for each forecast index.

    Without configured intervals the band is the central xi mass of the
    training residual around the baseline.
    """
    if config.risk_intervals:
        fixed = [(float(lo), float(hi)) for lo, hi in config.risk_intervals]
        return lambda t: fixed
    lo_q, hi_q = np.quantile(data.residual[: data.train_end], [(1 - config.xi) / 2, (1 + config.xi) / 2])

    def band(t: int) -> list[tuple[float, float]]:
        b = float(data.decomposition.baseline_at(t))
        return [(b + float(lo_q), b + float(hi_q))]

    return band


def _shifted_risk(post, low: float, high: float, shift: float) -> RiskReport:
    """Risk of a residual-scale posterior for a raw-scale interval."""
    report = risk(post, low - shift, high - shift)
    return dataclasses.replace(report, low=low, high=high)


def evaluate(
    trained: TrainedMethod, data: PreparedData, config: RunConfig, segments: list[Segment]
) -> EvalReport:
    """Roll one-step forecasts over the test span and score them."""
    method = trained.method.value
    bands = risk_bands(config, data)
    raw = data.series.values
    forecasts, records = [], []

    if trained.method == Method.SARIMA:
        acc = CausalAccessor(raw)
        model: Any = trained.model
        for step, t in enumerate(data.test_indices):
            with stage("forecast", method, t):
                acc.begin_step(t)
                history = acc.read(0, t)
                if config.refit_every and step > 0 and step % config.refit_every == 0:
                    model = fit_sarima(history, config.sarima)
                y_hat = forecast_one(model, history)
                acc.end_step()
            post = GaussianPosterior(y_hat, max(model.resid_var, 1e-12))
            risks = [risk(post, lo, hi) for lo, hi in bands(t)]
            record = forecast_record(t, post, y_hat, risks, config.top_k_components, actual=raw[t])
            record.update(baseline=0.0, forecast=y_hat, residual_actual=float(data.residual[t]))
            forecasts.append(y_hat)
            records.append(record)
        meta = {"model": model.to_dict()}
    else:
        acc = CausalAccessor(data.residual)
        model = trained.model
        tags = dict(trained.tags)
        policy = config.prune_policy(trained.method)
        cfg = model.feature_config
        depth = cfg.lag_depth
        for step, t in enumerate(data.test_indices):
            with stage("forecast", method, t):
                acc.begin_step(t)
                if step > 0:
                    # the point observed since the last step joins the window
                    last = t - 1
                    recent = acc.read(last - depth, t)
                    vector = FeatureVector(featurize(recent, depth, cfg).values, last)
                    tags[last] = data.threshold.tag(last, recent[-1] - recent[-2])
                    window = prune(model.window.append(vector, recent[-1]), tags.values(), policy)
                    model = model.with_window(window)
                    if config.refit_every and step % config.refit_every == 0:
                        hyper = fit(window, model.weights, model.kernel_kind, config.fit_options,
                                    model.scaler, start=model.hyper)
                        model = model.with_hyper(hyper)
                if model.kernel_kind == KernelKind.FEATURE_EMBEDDED:
                    post = predict_fegp(model, acc.read(t - depth, t), time_index=t)
                else:
                    post = predict_naive(model, t)
                map_residual = map_point(post, config.map_grid)
                acc.end_step()
            b = float(data.decomposition.baseline_at(t))
            risks = [_shifted_risk(post, lo, hi, b) for lo, hi in bands(t)]
            record = forecast_record(t, post, map_residual, risks, config.top_k_components, actual=raw[t])
            record.update(baseline=b, forecast=map_residual + b, residual_actual=float(data.residual[t]))
            forecasts.append(map_residual + b)
            records.append(record)
        meta = {"hyper": model.hyper.to_dict(), "window_size": len(model.window)}
        if trained.relief is not None:
            meta["weights"] = trained.relief.weights.to_list()

    if acc.violations:
        logger.error("%s read future values at steps %s", method, acc.violations[:5])
    reads = [acc.audit[t] for t in data.test_indices]
    report = EvalReport.build(
        method,
        np.asarray(forecasts),
        raw[data.train_end : data.test_end],
        segments,
        records,
        reads,
        start_index=data.train_end,
        meta=meta,
    )
    logger.info(
        "%s: total ACE %.2f, spike ACE %.2f over %d steps",
        method, report.ace_total, report.segment_aces.get("spike", 0.0), len(forecasts),
    )
    return report


def evaluation_segments(data: PreparedData, config: RunConfig) -> list[Segment]:
    """Spike/average partition of the test span, relative to its first index."""
    return segment_spikes(data.residual[data.train_end : data.test_end], config.xi, config.segment_pad)


def run_method(
    method: Method, data: PreparedData, config: RunConfig, segments: list[Segment]
) -> EvalReport:
    trained = train_method(method, data, config)
    return evaluate(trained, data, config, segments)


async def run_async(config: RunConfig, write: bool = True) -> dict[str, EvalReport]:
    """Evaluate all configured methods concurrently; reports come back in config order."""
    with stage("prepare"):
        data = prepare(config)
        segments = evaluation_segments(data, config)
    reports = await asyncio.gather(
        *(asyncio.to_thread(run_method, m, data, config, segments) for m in config.methods)
    )
    by_method = {r.method: r for r in reports}
    if write:
        with stage("report"):
            write_reports(by_method, config, data.train_end, data.test_end)
    return by_method


def run(config: RunConfig, write: bool = True) -> dict[str, EvalReport]:
    return asyncio.run(run_async(config, write))


# -- train / forecast artifacts --

def train(config: RunConfig, output_dir: str | Path | None = None) -> dict[str, TrainedMethod]:
    """Fit every method on the training span and store the models."""
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("prepare"):
        data = prepare(config)
    trained = {m.value: train_method(m, data, config) for m in config.methods}

    with stage("save"):
        baseline = {
            "slot_minutes": config.slot_minutes,
            "train_end": data.train_end,
            "start_time": data.series.start_time.isoformat(),
            "baseline": [float(x) for x in data.decomposition.baseline],
            "threshold": data.threshold.to_dict(),
        }
        _write_json(out / "baseline.json", baseline)
        for name, item in trained.items():
            if isinstance(item.model, FegpModel):
                save_model(item.model, out / f"model_{name}.json")
            else:
                _write_json(out / f"model_{name}.json", item.model.to_dict())
            if item.relief is not None:
                item.relief.save(out / "relief.json")
    logger.info("Trained %s into %s", sorted(trained), out)
    return trained


def forecast_next(
    config: RunConfig, model_dir: str | Path | None = None, at: int | None = None
) -> list[dict[str, Any]]:
    """One forecast record per stored model for index ``at`` (default: right after the data)."""
    model_dir = Path(model_dir or config.output_dir)
    with stage("load"):
        series = load_series(config)
        with open(model_dir / "baseline.json", encoding="utf-8") as f:
            stored = json.load(f)
    t = len(series) if at is None else at
    if not 0 < t <= len(series):
        raise StageError("forecast", ValueError(f"index {t} outside 1..{len(series)}"))
    with stage("align"):
        if stored["slot_minutes"] != config.slot_minutes:
            raise ValueError(
                f"models were trained on {stored['slot_minutes']}-minute slots, "
                f"data has {config.slot_minutes}"
            )
        shift = slots_since(series, datetime.fromisoformat(stored["start_time"]))
        decomposition = extend_residual(series, np.asarray(stored["baseline"]), shift)
    if shift:
        logger.info("Data starts %d slots after the training data", shift)
    residual = decomposition.residual.values
    b = float(decomposition.baseline_at(t))

    records = []
    for method in config.methods:
        path = model_dir / f"model_{method.value}.json"
        if not path.exists():
            logger.warning("No stored model for %s in %s", method.value, model_dir)
            continue
        with stage("forecast", method.value, t):
            if method == Method.SARIMA:
                with open(path, encoding="utf-8") as f:
                    sarima = SarimaModel.from_dict(json.load(f))
                y_hat = forecast_one(sarima, series.values[:t])
                post = GaussianPosterior(y_hat, max(sarima.resid_var, 1e-12))
                record = forecast_record(t, post, y_hat, top_k=config.top_k_components)
                record.update(baseline=0.0, forecast=y_hat)
            else:
                model = load_model(path)
                depth = model.feature_config.lag_depth
                if model.kernel_kind == KernelKind.FEATURE_EMBEDDED:
                    post = predict_fegp(model, residual[t - depth : t], time_index=t)
                else:
                    post = predict_naive(model, t + shift)
                value = map_point(post, config.map_grid)
                record = forecast_record(t, post, value, top_k=config.top_k_components)
                record.update(baseline=b, forecast=value + b)
        record["method"] = method.value
        records.append(record)
    return records


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
