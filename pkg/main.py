"""Entry point for the forecasting CLI.

    python main.py synth --spec configs/synthetic_2week.yaml --out data/synthetic.csv
    python main.py eval --config configs/eval_2week.yaml
    LOG_CONFIG=logging.debug.json python main.py eval --config configs/eval_2week.yaml --methods "[fegp]"
    FEGP_LOG_LEVEL=DEBUG python main.py train --config configs/eval_2week.yaml
"""
# pylint: disable=import-outside-toplevel,wrong-import-position  # imports after dotenv/logging setup

from __future__ import annotations

import sys

from dotenv import load_dotenv

load_dotenv()

from src.logging_config import log_init

log_init()

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
