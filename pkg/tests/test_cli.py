"""Tests for the command-line entry point."""
# pylint: disable=missing-function-docstring  # test names are self-documenting

import json

import pandas as pd
import yaml

from src.cli import EXIT_CONFIG, EXIT_STAGE, build_parser, main

SMALL = {
    "synthetic": {"seed": 3, "days": 3},
    "test_length": 8,
    "methods": ["fegp", "sarima"],
    "restarts": 1,
    "max_iter": 30,
    "max_size": 64,
    "map_grid": 256,
}


def _config(tmp_path, **extra):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({**SMALL, "output_dir": str(tmp_path / "out"), **extra}), encoding="utf-8")
    return str(path)


class TestParser:

    def test_dash_and_underscore_flags(self):
        parser = build_parser()
        a = parser.parse_args(["eval", "--max-size", "12"])
        b = parser.parse_args(["eval", "--max_size", "12"])
        assert a.set_max_size == b.set_max_size == "12"

    def test_unset_flags_are_absent(self):
        args = build_parser().parse_args(["eval"])
        assert not any(k.startswith("set_") for k in vars(args))


class TestMain:

    def test_synth_writes_csv(self, tmp_path):
        out = tmp_path / "traffic.csv"
        events = tmp_path / "events.csv"
        assert main(["synth", "--seed", "5", "--out", str(out), "--events", str(events)]) == 0
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["timestamp", "value"]
        assert len(frame) == 14 * 96
        assert set(pd.read_csv(events).columns) == {"kind", "onset", "peak"}

    def test_decompose(self, tmp_path):
        out = tmp_path / "split.csv"
        features = tmp_path / "features.csv"
        code = main(["decompose", "--config", _config(tmp_path), "--out", str(out), "--features", str(features)])
        assert code == 0
        assert list(pd.read_csv(out).columns) == ["timestamp", "raw", "baseline", "residual"]
        assert "lambda9" in pd.read_csv(features).columns

    def test_eval_and_report(self, tmp_path, capsys):
        config = _config(tmp_path)
        assert main(["eval", "--config", config]) == 0
        assert "fegp: ACE" in capsys.readouterr().out
        assert (tmp_path / "out" / "summary.md").exists()
        assert main(["report", "--output-dir", str(tmp_path / "out")]) == 0

    def test_train_and_forecast(self, tmp_path, capsys):
        config = _config(tmp_path)
        models = str(tmp_path / "models")
        assert main(["train", "--config", config, "--model-dir", models]) == 0
        capsys.readouterr()
        assert main(["forecast", "--config", config, "--model-dir", models]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [json.loads(line)["method"] for line in lines] == ["fegp", "sarima"]

    def test_invalid_flag_value_is_config_error(self, tmp_path):
        assert main(["eval", "--config", _config(tmp_path), "--xi", "2.5"]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["eval", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_stage_failure(self, tmp_path, capsys):
        config = _config(tmp_path, methods=["sarima"], sarima_seasonal_order=[0, 1, 1, 200])
        assert main(["eval", "--config", config]) == EXIT_STAGE
        assert "sarima" in capsys.readouterr().err
