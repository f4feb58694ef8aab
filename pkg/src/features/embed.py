"""Feature embedding of time points.

Each time point l is mapped to a vector of statistics of the L values that
precede it. The default generator produces nine features: four raw lags
(baseline level), two absolute trend terms, two relative trend ratios, and
the spread of the last five values (fluctuation degree).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import InsufficientHistoryError

logger = logging.getLogger(__name__)


class StdMode(str, Enum):
    """Denominator convention for the fluctuation feature."""

    POPULATION = "population"
    SAMPLE = "sample"


class FeatureConfig(BaseModel):
    """Feature generator settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lag_depth: int = Field(5, gt=0, description="Number of past values L the generator sees")
    ratio_epsilon: float = Field(1e-6, gt=0, description="Smallest ratio denominator magnitude")
    std_mode: StdMode = StdMode.POPULATION
    generator: str = "traffic9"

    @model_validator(mode="after")
    def _check_depth(self) -> FeatureConfig:
        gen = get_generator(self.generator)
        if self.lag_depth < gen.min_history:
            raise ValueError(
                f"generator {self.generator!r} needs lag_depth >= {gen.min_history}, "
                f"got {self.lag_depth}"
            )
        return self

    @property
    def dimension(self) -> int:
        return get_generator(self.generator).dimension


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Feature values of one time point."""

    values: np.ndarray
    time_index: int

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("a feature vector is one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite feature at time index {self.time_index}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dimension(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class FeatureWeights:
    """Nonnegative per-feature weights with unit L2 norm."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0):
            raise ValueError("feature weights must be nonnegative")
        if abs(float(np.linalg.norm(w)) - 1.0) > 1e-9:
            raise ValueError(f"feature weights must have unit norm, got {np.linalg.norm(w)}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def dimension(self) -> int:
        return int(self.w.size)

    @classmethod
    def uniform(cls, dimension: int) -> FeatureWeights:
        return cls(np.full(dimension, 1.0 / np.sqrt(dimension)))

    def to_list(self) -> list[float]:
        return [float(x) for x in self.w]


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Per-dimension z-scoring. Dimensions with zero spread keep scale 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> FeatureScaler:
        matrix = np.asarray(matrix, dtype=float)
        mean = matrix.mean(axis=0)
        scale = matrix.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, dimension: int) -> FeatureScaler:
        return cls(np.zeros(dimension), np.ones(dimension))

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict[str, Any]:
        return {"mean": [float(x) for x in self.mean], "scale": [float(x) for x in self.scale]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FeatureScaler:
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


# -- generators --

@runtime_checkable
class FeatureGenerator(Protocol):
    """Maps lag rows (most recent first) to feature rows."""

    name: str
    dimension: int
    min_history: int

    def __call__(self, lags: np.ndarray, cfg: FeatureConfig) -> np.ndarray: ...


def _safe_ratio(num: np.ndarray, den: np.ndarray, eps: float) -> np.ndarray:
    """num / den with |den| < eps replaced by sign(den) * eps, sign(0) = +1."""
    den = np.where(np.abs(den) < eps, np.where(den < 0, -eps, eps), den)
    return num / den


class TrafficFeatures:
    """Nine-feature generator over the last five values.

    With y1 the most recent value:
    y1..y4, y2-y5, y3+y4, (y2-y1)/(y3-y2), (y2-y3)/(y3-y4), std(y1..y5).
    """

    name = "traffic9"
    dimension = 9
    min_history = 5

    def __call__(self, lags: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
        y1, y2, y3, y4, y5 = (lags[:, k] for k in range(5))
        ddof = 0 if cfg.std_mode == StdMode.POPULATION else 1
        eps = cfg.ratio_epsilon
        return np.column_stack(
            [
                y1,
                y2,
                y3,
                y4,
                y2 - y5,
                y3 + y4,
                _safe_ratio(y2 - y1, y3 - y2, eps),
                _safe_ratio(y2 - y3, y3 - y4, eps),
                lags[:, :5].std(axis=1, ddof=ddof),
            ]
        )


GENERATORS: dict[str, FeatureGenerator] = {TrafficFeatures.name: TrafficFeatures()}


def get_generator(name: str) -> FeatureGenerator:
    try:
        return GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown feature generator {name!r}; known: {sorted(GENERATORS)}") from None


# -- operations --

def featurize(history: np.ndarray | list[float], l: int, cfg: FeatureConfig) -> FeatureVector:  # noqa: E741
    """Features of time point ``l`` from ``history[l-L:l]``.

    ``l`` may equal ``len(history)``, which featurizes the next, not yet
    observed, point.
    """
    history = np.asarray(history, dtype=float)
    depth = cfg.lag_depth
    if l < depth:
        raise InsufficientHistoryError(f"time index {l} has fewer than {depth} previous values")
    if l > history.size:
        raise InsufficientHistoryError(f"time index {l} is beyond history of length {history.size}")
    lags = history[l - depth : l][::-1][np.newaxis, :]
    row = get_generator(cfg.generator)(lags, cfg)[0]
    return FeatureVector(row, l)


def feature_matrix(
    residual: np.ndarray | list[float], cfg: FeatureConfig, include_next: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised features for every l in [L, len) (or [L, len] with ``include_next``).

    Returns (time indices, matrix of shape (count, dimension)).
    """
    values = np.asarray(residual, dtype=float)
    depth = cfg.lag_depth
    if values.size <= depth and not (include_next and values.size == depth):
        raise InsufficientHistoryError(
            f"series of length {values.size} has no point with {depth} previous values"
        )
    windows = sliding_window_view(values, depth)
    if not include_next:
        windows = windows[:-1]
    lags = windows[:, ::-1]
    matrix = get_generator(cfg.generator)(lags, cfg)
    indices = np.arange(depth, depth + lags.shape[0])
    return indices, matrix


def featurize_series(
    residual: np.ndarray | list[float], cfg: FeatureConfig
) -> list[tuple[int, FeatureVector]]:
    """One FeatureVector per index l in [L, len(residual)), in order."""
    indices, matrix = feature_matrix(residual, cfg)
    return [(int(i), FeatureVector(row, int(i))) for i, row in zip(indices, matrix)]


def weighted_distance(a: FeatureVector, b: FeatureVector, w: FeatureWeights) -> float:
    """Euclidean distance between the weighted feature vectors."""
    if not a.dimension == b.dimension == w.dimension:
        raise ValueError(
            f"dimension mismatch: {a.dimension}, {b.dimension}, weights {w.dimension}"
        )
    return float(np.sqrt(np.sum((w.w * a.values - w.w * b.values) ** 2)))


def write_feature_csv(path: str | Path, indices: np.ndarray, matrix: np.ndarray) -> None:
    """Dump ``index,lambda1..lambdaN`` rows for inspection."""
    columns = {f"lambda{k + 1}": matrix[:, k] for k in range(matrix.shape[1])}
    frame = pd.DataFrame({"index": indices, **columns})
    frame.to_csv(path, index=False)
    logger.info("Wrote %d feature rows to %s", len(frame), path)
