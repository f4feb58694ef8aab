"""Tests for the evaluation pipeline, its causality audit and stored artifacts."""
# pylint: disable=missing-function-docstring  # test names are self-documenting
# pylint: disable=redefined-outer-name  # pytest fixtures

import json
from datetime import timedelta
from pathlib import Path

import numpy as np
import pytest

from src.bench.report import rerender
from src.bench.runner import (
    CausalAccessor,
    _relief,
    forecast_next,
    prepare,
    risk_bands,
    run,
    run_async,
    split_indices,
    stage,
    train,
)
from src.config import Method, RunConfig, load_config
from src.errors import StageError
from src.features.embed import feature_matrix
from src.features.relief import Category, CategoryTag
from src.series.decompose import decompose
from src.series.synth import SyntheticSpec, synthesize
from src.series.types import TrafficSeries

CONFIGS = Path(__file__).parent.parent / "configs"
METHODS = ["fegp", "naive_gp", "sarima"]


def _config(out: Path, **overrides) -> RunConfig:
    values = {
        "synthetic": SyntheticSpec(seed=3, days=3, spike_rate=3.0),
        "test_length": 48,
        "methods": METHODS,
        "restarts": 1,
        "max_iter": 50,
        "max_size": 96,
        "map_grid": 512,
        "top_k_components": 5,
        "output_dir": out,
    }
    values.update(overrides)
    return RunConfig.model_validate(values)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = _config(out)
    return config, run(config)


class TestCausalAccessor:

    def test_records_highest_read(self):
        acc = CausalAccessor(np.arange(10.0))
        acc.begin_step(6)
        acc.read(0, 3)
        acc.read(2, 6)
        assert acc.end_step() == 5
        assert acc.violations == []

    def test_no_reads(self):
        acc = CausalAccessor(np.arange(10.0))
        acc.begin_step(4)
        assert acc.end_step() == -1

    def test_flags_lookahead(self):
        acc = CausalAccessor(np.arange(10.0))
        acc.begin_step(4)
        acc.read(3, 5)
        acc.end_step()
        assert acc.violations == [4]

    def test_reads_are_copies(self):
        values = np.arange(5.0)
        acc = CausalAccessor(values)
        acc.begin_step(5)
        acc.read(0, 5)[0] = 99.0
        assert values[0] == 0.0

    def test_out_of_range(self):
        acc = CausalAccessor(np.arange(5.0))
        with pytest.raises(IndexError):
            acc.read(3, 9)

    def test_end_without_begin(self):
        with pytest.raises(RuntimeError):
            CausalAccessor(np.arange(5.0)).end_step()


class TestStage:

    def test_wraps_failures(self):
        with pytest.raises(StageError) as info:
            with stage("fit", "fegp", 12):
                raise ValueError("boom")
        assert info.value.stage == "fit"
        assert info.value.method == "fegp"
        assert info.value.step == 12
        assert isinstance(info.value.cause, ValueError)
        assert "fegp/fit at step 12" in str(info.value)

    def test_stage_errors_pass_through(self):
        inner = StageError("relief", ValueError("x"))
        with pytest.raises(StageError) as info:
            with stage("fit"):
                raise inner
        assert info.value is inner


class TestPrepare:

    def test_split_defaults(self, tmp_path):
        config = _config(tmp_path)
        assert split_indices(config, 288) == (240, 288)

    def test_split_rejects_short_series(self, tmp_path):
        with pytest.raises(ValueError):
            split_indices(_config(tmp_path, test_length=500), 288)

    def test_baseline_uses_training_span_only(self, tmp_path):
        data = prepare(_config(tmp_path))
        expected = decompose(data.series.slice(0, data.train_end)).baseline
        np.testing.assert_array_equal(data.decomposition.baseline, expected)
        assert data.test_indices == range(240, 288)

    def test_default_risk_band_surrounds_baseline(self, tmp_path):
        config = _config(tmp_path)
        data = prepare(config)
        (low, high), = risk_bands(config, data)(250)
        assert low < data.decomposition.baseline_at(250) < high

    def test_configured_risk_bands(self, tmp_path):
        config = _config(tmp_path, risk_intervals=[[50.0, 150.0], [0.0, 1000.0]])
        assert risk_bands(config, prepare(config))(250) == [(50.0, 150.0), (0.0, 1000.0)]

    def test_relief_fallback_without_extremes(self, tmp_path):
        config = _config(tmp_path)
        data = prepare(config)
        indices, matrix = feature_matrix(data.residual[: data.train_end], config.feature_config)
        tags = {int(i): CategoryTag(int(i), 0.0, Category.B_TYPICAL) for i in indices}
        relief, weights, scaler = _relief(indices, matrix, tags, config)
        assert relief is None
        np.testing.assert_allclose(weights.w, np.full(9, 1 / 3))
        assert scaler.transform(matrix).std(axis=0) == pytest.approx(np.ones(9))


class TestRun:

    def test_every_method_reports(self, small_run):
        _, reports = small_run
        assert list(reports) == METHODS
        for report in reports.values():
            assert len(report.forecasts) == 48
            assert report.ace_curve.size == 48
            assert report.ace_total >= 0
            assert report.causality_ok

    def test_feature_model_reads_only_the_past(self, small_run):
        _, reports = small_run
        report = reports["fegp"]
        for step, read in enumerate(report.max_index_read):
            assert read == 240 + step - 1

    def test_forecast_is_map_plus_baseline(self, small_run):
        _, reports = small_run
        for record in reports["fegp"].forecasts:
            assert record["forecast"] == pytest.approx(record["map"] + record["baseline"])
            assert len(record["components"]) <= 5
            assert record["truncated"]
            assert len(record["risk"]) == 1

    def test_segment_aces_add_up(self, small_run):
        _, reports = small_run
        for report in reports.values():
            assert sum(report.segment_aces.values()) == pytest.approx(report.ace_total)

    def test_writes_reports(self, small_run):
        config, _ = small_run
        out = Path(config.output_dir)
        for name in ("config.yaml", "ace_curves.csv", "summary.md"):
            assert (out / name).exists()
        for method in METHODS:
            assert (out / f"eval_{method}.json").exists()
            assert (out / f"forecasts_{method}.csv").exists()
            lines = (out / f"forecasts_{method}.jsonl").read_text(encoding="utf-8").splitlines()
            assert len(lines) == 48
        assert "| fegp |" in (out / "summary.md").read_text(encoding="utf-8")

    def test_deterministic(self, small_run, tmp_path):
        config, _ = small_run
        again = config.model_copy(update={"output_dir": tmp_path})
        run(again)
        for method in METHODS:
            for name in (f"forecasts_{method}.jsonl", f"eval_{method}.json"):
                assert (tmp_path / name).read_bytes() == (Path(config.output_dir) / name).read_bytes()

    def test_rerender_matches(self, small_run, tmp_path):
        config, reports = small_run
        again = config.model_copy(update={"output_dir": tmp_path})
        run(again)
        rebuilt = rerender(tmp_path)
        for method, report in reports.items():
            assert rebuilt[method].ace_total == pytest.approx(report.ace_total)
            assert rebuilt[method].causality_ok

    def test_refit_cadence(self, tmp_path):
        config = _config(tmp_path, methods=["fegp", "sarima"], refit_every=24, test_length=48)
        reports = run(config, write=False)
        assert len(reports["fegp"].forecasts) == 48
        assert reports["sarima"].causality_ok

    def test_stage_error_names_method(self, tmp_path):
        config = _config(tmp_path, methods=["sarima"], sarima_seasonal_order=[0, 1, 1, 200])
        with pytest.raises(StageError) as info:
            run(config, write=False)
        assert info.value.method == "sarima"

    async def test_run_inside_event_loop(self, tmp_path):
        reports = await run_async(_config(tmp_path, methods=["naive_gp", "sarima"], test_length=12), write=False)
        assert list(reports) == ["naive_gp", "sarima"]
        assert all(len(r.forecasts) == 12 for r in reports.values())


class TestArtifacts:

    def test_train_and_forecast(self, tmp_path):
        config = _config(tmp_path / "out")
        model_dir = tmp_path / "models"
        trained = train(config, model_dir)
        assert set(trained) == set(METHODS)
        for name in ("baseline.json", "relief.json", *(f"model_{m}.json" for m in METHODS)):
            assert (model_dir / name).exists()
        relief = json.loads((model_dir / "relief.json").read_text(encoding="utf-8"))
        assert len(relief["weights"]) == 9

        records = forecast_next(config, model_dir)
        assert [r["method"] for r in records] == METHODS
        for record in records:
            assert record["index"] == 288
            assert np.isfinite(record["forecast"])

    def test_forecast_index_out_of_range(self, tmp_path):
        config = _config(tmp_path / "out", methods=["naive_gp"])
        train(config, tmp_path / "models")
        with pytest.raises(StageError):
            forecast_next(config, tmp_path / "models", at=10_000)

    def test_forecast_on_later_export(self, tmp_path):
        series = synthesize(SyntheticSpec(seed=3, days=3, spike_rate=3.0))
        full, late = tmp_path / "full.csv", tmp_path / "late.csv"
        series.to_csv(full)
        series.slice(24).to_csv(late)  # starts at 06:00
        config = _config(tmp_path / "out", synthetic=None, data=full, methods=["fegp", "naive_gp"])
        train(config, tmp_path / "models")

        expected = forecast_next(config, tmp_path / "models", at=200)
        shifted = forecast_next(config.model_copy(update={"data": late}), tmp_path / "models", at=176)
        assert [r["method"] for r in shifted] == ["fegp", "naive_gp"]
        for want, got in zip(expected, shifted):
            assert got["index"] == 176
            assert got["baseline"] == pytest.approx(want["baseline"], rel=1e-12)
            assert got["forecast"] == pytest.approx(want["forecast"], rel=1e-9, abs=1e-9)

    def test_forecast_rejects_off_grid_export(self, tmp_path):
        series = synthesize(SyntheticSpec(seed=3, days=3, spike_rate=3.0))
        full, odd = tmp_path / "full.csv", tmp_path / "odd.csv"
        series.to_csv(full)
        TrafficSeries(series.start_time + timedelta(minutes=7), series.values).to_csv(odd)
        config = _config(tmp_path / "out", synthetic=None, data=full, methods=["fegp"])
        train(config, tmp_path / "models")
        with pytest.raises(StageError) as exc:
            forecast_next(config.model_copy(update={"data": odd}), tmp_path / "models")
        assert exc.value.stage == "align"


@pytest.mark.slow
@pytest.mark.integration
class TestTwoWeekComparison:

    def test_feature_gp_wins_on_spikes(self, tmp_path):
        config = load_config(CONFIGS / "eval_2week.yaml", {"output_dir": str(tmp_path)})
        reports = run(config)
        fegp = reports[Method.FEGP.value]
        others = [reports[Method.NAIVE_GP.value], reports[Method.SARIMA.value]]
        assert all(r.causality_ok for r in reports.values())
        assert sum(s.label == "spike" for s in fegp.segments) >= 1
        for other in others:
            assert fegp.segment_aces["spike"] < other.segment_aces["spike"]
        assert fegp.ace_total <= 1.05 * min(r.ace_total for r in others)
