"""Command-line interface.

Subcommands:
    synth      write a synthetic traffic CSV from a spec
    decompose  write the baseline/residual split (and optionally features)
    train      fit every configured method and store the models
    forecast   one-step forecast from stored models
    eval       full rolling evaluation with reports
    report     re-render reports from stored forecasts

Every RunConfig key is also a flag (``--max_size 96`` or ``--max-size 96``)
that overrides the YAML config given with ``--config`` or FEGP_CONFIG.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Sequence

import pandas as pd
import yaml
from pydantic import ValidationError

from src.bench.report import rerender
from src.bench.runner import forecast_next, prepare, run, train
from src.config import CONFIG_ENV, RunConfig, load_config, parse_flag_value
from src.errors import StageError
from src.features.embed import feature_matrix, write_feature_csv
from src.series.decompose import write_decomposition_csv
from src.series.synth import SyntheticSpec, load_synthetic_spec, synthesize_with_events

logger = logging.getLogger(__name__)

EXIT_STAGE = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    """Invalid configuration or flags."""


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        "--config",
        type=str,
        default=os.environ.get(CONFIG_ENV),
        help=f"YAML run config (default: ${CONFIG_ENV})",
    )
    group = parent.add_argument_group("config overrides")
    for name, info in RunConfig.model_fields.items():
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        group.add_argument(
            *flags, dest=f"set_{name}", type=str, default=argparse.SUPPRESS,
            help=info.description or f"override '{name}'",
        )
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fegp", description="Feature-embedded GP traffic forecasting")
    sub = parser.add_subparsers(dest="command", required=True)
    config_parent = _config_parent()

    p = sub.add_parser("synth", help="write a synthetic traffic CSV")
    p.add_argument("--spec", type=str, default=None, help="SyntheticSpec YAML (default: built-in defaults)")
    p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    p.add_argument("--out", type=str, required=True, help="output CSV path")
    p.add_argument("--events", type=str, default=None, help="optional CSV of injected events")

    p = sub.add_parser("decompose", parents=[config_parent], help="write baseline and residual")
    p.add_argument("--out", type=str, required=True, help="output CSV path")
    p.add_argument("--features", type=str, default=None, help="also write the training feature matrix")

    p = sub.add_parser("train", parents=[config_parent], help="fit and store models")
    p.add_argument("--model-dir", type=str, default=None, help="default: output_dir")

    p = sub.add_parser("forecast", parents=[config_parent], help="forecast from stored models")
    p.add_argument("--model-dir", type=str, default=None, help="default: output_dir")
    p.add_argument("--at", type=int, default=None, help="index to forecast (default: after the data)")

    sub.add_parser("eval", parents=[config_parent], help="rolling evaluation with reports")

    p = sub.add_parser("report", help="re-render reports from stored forecasts")
    p.add_argument("--output-dir", type=str, required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {}
    for key, raw in vars(args).items():
        if key.startswith("set_"):
            try:
                overrides[key[4:]] = parse_flag_value(raw)
            except yaml.YAMLError as e:
                raise ConfigError(f"--{key[4:]}: {e}") from e
    try:
        return load_config(args.config, overrides)
    except (ValidationError, ValueError, OSError, yaml.YAMLError) as e:
        raise ConfigError(str(e)) from e


def _cmd_synth(args: argparse.Namespace) -> None:
    try:
        spec = load_synthetic_spec(args.spec) if args.spec else SyntheticSpec()
        if args.seed is not None:
            spec = spec.model_copy(update={"seed": args.seed})
    except (ValidationError, OSError, yaml.YAMLError) as e:
        raise ConfigError(str(e)) from e
    series, events = synthesize_with_events(spec)
    series.to_csv(args.out)
    if args.events:
        pd.DataFrame(
            [{"kind": e.kind, "onset": e.onset, "peak": e.peak} for e in events],
            columns=["kind", "onset", "peak"],
        ).to_csv(args.events, index=False)
    print(f"wrote {len(series)} slots and {len(events)} events to {args.out}")


def _cmd_decompose(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    data = prepare(config)
    write_decomposition_csv(args.out, data.series, data.decomposition)
    if args.features:
        indices, matrix = feature_matrix(data.residual[: data.train_end], config.feature_config)
        write_feature_csv(args.features, indices, matrix)
    print(f"wrote decomposition of {len(data.series)} slots to {args.out}")


def _cmd_train(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    trained = train(config, args.model_dir)
    print(f"trained {', '.join(trained)}")


def _cmd_forecast(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    for record in forecast_next(config, args.model_dir, args.at):
        print(json.dumps(record))


def _cmd_eval(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    reports = run(config)
    for name, r in reports.items():
        print(f"{name}: ACE {r.ace_total:.2f} (spike {r.segment_aces['spike']:.2f}, "
              f"average {r.segment_aces['average']:.2f})")
    print(f"reports in {config.output_dir}")


def _cmd_report(args: argparse.Namespace) -> None:
    reports = rerender(args.output_dir)
    print(f"re-rendered {', '.join(reports)} in {args.output_dir}")


COMMANDS = {
    "synth": _cmd_synth,
    "decompose": _cmd_decompose,
    "train": _cmd_train,
    "forecast": _cmd_forecast,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; returns the process exit status."""
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"stage error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as e:  # pylint: disable=broad-exception-caught  # one-line diagnostic instead of a traceback
        logger.debug("Unhandled error", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE
    return 0
