"""dictConfig-based logging setup for the CLI and the test harness.

The JSON file is picked from, in order: the ``path`` argument, the
LOG_CONFIG environment variable, ``logging.json`` next to this package.
FEGP_LOG_LEVEL (or ``level``) then overrides the level of the ``src``
loggers without editing the file, e.g. ``FEGP_LOG_LEVEL=DEBUG``.
"""

from __future__ import annotations

import json
import logging
import logging.config
import os
from pathlib import Path
from typing import Any

PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG = PROJECT_ROOT / "logging.json"
CONFIG_ENV = "LOG_CONFIG"
LEVEL_ENV = "FEGP_LOG_LEVEL"


def resolve_config_path(path: str | Path | None = None) -> Path:
    """Config file to load; bare names like ``logging.debug.json`` fall back to the project root."""
    candidate = Path(path or os.environ.get(CONFIG_ENV) or DEFAULT_CONFIG)
    if not candidate.is_absolute() and not candidate.exists():
        candidate = PROJECT_ROOT / candidate
    return candidate


def load_log_config(path: str | Path | None = None, level: str | None = None) -> dict[str, Any]:
    with open(resolve_config_path(path), encoding="utf-8") as f:
        config = json.load(f)
    if not config.get("handlers"):
        raise ValueError("logging config defines no handlers")
    level = level or os.environ.get(LEVEL_ENV)
    if level:
        config.setdefault("loggers", {})["src"] = {"level": level.upper()}
    return config


def log_init(path: str | Path | None = None, level: str | None = None) -> None:
    """Apply the resolved logging config."""
    logging.config.dictConfig(load_log_config(path, level))
