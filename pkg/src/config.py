"""Run configuration: defaults < YAML file < command-line flags.

Every RunConfig field is a flat key so that each one can be overridden by a
flag of the same name (``--lag_depth 7`` or ``--lag-depth 7``).
"""

from __future__ import annotations

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.features.embed import FeatureConfig, StdMode
from src.gp.model import FitOptions, Optimizer, PrunePolicy
from src.sarima import SarimaOrder
from src.series.synth import SyntheticSpec, load_synthetic_spec

logger = logging.getLogger(__name__)

CONFIG_ENV = "FEGP_CONFIG"


class Method(str, Enum):
    FEGP = "fegp"
    NAIVE_GP = "naive_gp"
    SARIMA = "sarima"


class RunConfig(BaseModel):
    """Everything one evaluation run needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # data
    data: Path | None = Field(None, description="Traffic CSV with timestamp,value rows")
    synthetic: SyntheticSpec | None = Field(None, description="Synthetic spec (mapping or YAML path)")
    slot_minutes: float = Field(15.0, gt=0)
    train_end: int | None = Field(None, gt=0, description="First test index; default len - test_length")
    test_end: int | None = Field(None, gt=0, description="End of the test span (exclusive)")
    test_length: int = Field(672, gt=0)

    methods: list[Method] = Field(
        default_factory=lambda: [Method.FEGP, Method.NAIVE_GP, Method.SARIMA], min_length=1
    )

    # features and Relief
    xi: float = Field(0.9, gt=0, lt=1, description="Confidence level splitting extreme from typical")
    lag_depth: int = Field(5, gt=0)
    ratio_epsilon: float = Field(1e-6, gt=0)
    std_mode: StdMode = StdMode.POPULATION
    standardize: bool = Field(True, description="z-score features before Relief and the kernel")

    # GP
    max_size: int = Field(672, ge=1)
    extreme_keep_fraction: float = Field(0.5, ge=0, le=1)
    refit_every: int | None = Field(None, ge=1, description="Refit cadence in steps; null never refits")
    restarts: int = Field(5, ge=1)
    optimizer: Optimizer = Optimizer.LBFGS
    max_iter: int = Field(200, ge=1)
    fix_noise: bool = False
    map_grid: int = Field(4096, ge=16)

    # SARIMA
    sarima_order: tuple[int, int, int] = (1, 0, 1)
    sarima_seasonal_order: tuple[int, int, int, int] = (0, 1, 1, 96)

    # reporting
    risk_intervals: list[tuple[float, float]] = Field(
        default_factory=list, description="Raw-scale [low, high] demand bands"
    )
    segment_pad: int = Field(2, ge=0)
    top_k_components: int | None = Field(None, ge=1)
    output_dir: Path = Path("runs/latest")
    seed: int = 0

    @field_validator("risk_intervals")
    @classmethod
    def _check_intervals(cls, v: list[tuple[float, float]]) -> list[tuple[float, float]]:
        for low, high in v:
            if low > high:
                raise ValueError(f"risk interval [{low}, {high}] has low > high")
        return v

    @field_validator("methods")
    @classmethod
    def _dedupe_methods(cls, v: list[Method]) -> list[Method]:
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def _check_source(self) -> RunConfig:
        if (self.data is None) == (self.synthetic is None):
            raise ValueError("set exactly one of 'data' and 'synthetic'")
        if self.train_end is not None and self.test_end is not None and self.train_end >= self.test_end:
            raise ValueError(f"train_end {self.train_end} must be below test_end {self.test_end}")
        return self

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            lag_depth=self.lag_depth, ratio_epsilon=self.ratio_epsilon, std_mode=self.std_mode
        )

    def prune_policy(self, method: Method) -> PrunePolicy:
        """Naive-GP always truncates chronologically."""
        fraction = self.extreme_keep_fraction if method == Method.FEGP else 0.0
        return PrunePolicy(max_size=self.max_size, extreme_keep_fraction=fraction)

    @property
    def fit_options(self) -> FitOptions:
        return FitOptions(
            restarts=self.restarts,
            seed=self.seed,
            optimizer=self.optimizer,
            max_iter=self.max_iter,
            fix_noise=self.fix_noise,
        )

    @property
    def sarima(self) -> SarimaOrder:
        return SarimaOrder.from_lists(self.sarima_order, self.sarima_seasonal_order)


def _resolve_paths(data: dict[str, Any], base: Path) -> dict[str, Any]:
    """Make file references relative to the config file's directory."""
    data = dict(data)
    if isinstance(data.get("data"), str) and not Path(data["data"]).is_absolute():
        data["data"] = str(base / data["data"])
    if isinstance(data.get("synthetic"), str):
        spec_path = Path(data["synthetic"])
        if not spec_path.is_absolute():
            spec_path = base / spec_path
        data["synthetic"] = load_synthetic_spec(spec_path)
    return data


def load_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus flag overrides.

    ``path`` defaults to the FEGP_CONFIG environment variable. Relative paths
    in the file resolve against the file's directory, relative paths given as
    overrides against the working directory.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must contain a mapping")
        data = _resolve_paths(loaded, path.parent)
        logger.info("Loaded run config from %s", path)
    if overrides:
        # a data source on the command line replaces the file's source
        if "data" in overrides:
            data.pop("synthetic", None)
        if "synthetic" in overrides:
            data.pop("data", None)
        data.update(_resolve_paths(overrides, Path.cwd()))
        logger.debug("Config overrides: %s", sorted(overrides))
    return RunConfig.model_validate(data)


def parse_flag_value(raw: str) -> Any:
    """Flag values are YAML scalars or flow sequences (``"[fegp, sarima]"``)."""
    return yaml.safe_load(raw)


def dump_config(config: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
