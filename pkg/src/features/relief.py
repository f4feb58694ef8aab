"""Extreme/typical tagging and Relief-style feature weighting.

Time points whose first difference falls outside the xi*100% central
interval of a Gaussian fitted to all first differences are tagged extreme
(category A), the rest typical (category B). Feature weights then maximise
the summed weighted L1 margin between every extreme point and its nearest
typical point, subject to ||w||_2 = 1, w >= 0. That problem is linear over
the nonnegative part of the unit sphere, so the maximiser is z / ||z||_2
with z the per-feature accumulated gaps.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm

from src.errors import EmptyCategoryError
from src.features.embed import FeatureScaler, FeatureVector, FeatureWeights

logger = logging.getLogger(__name__)

DEFAULT_XI = 0.9


class Category(str, Enum):
    """Extreme (A) or typical (B) time point."""

    A_EXTREME = "A_extreme"
    B_TYPICAL = "B_typical"


@dataclass(frozen=True)
class CategoryTag:
    """Category of one time point and the first difference that decided it."""

    index: int
    delta_y: float
    category: Category

    @property
    def is_extreme(self) -> bool:
        return self.category == Category.A_EXTREME


@dataclass(frozen=True)
class CategoryThreshold:
    """Gaussian fitted to first differences, plus the two-sided quantile for xi."""

    xi: float
    mean: float
    std: float
    z: float

    def is_extreme(self, delta_y: float) -> bool:
        if self.std <= 0:
            return False
        return abs(delta_y - self.mean) > self.z * self.std

    def tag(self, index: int, delta_y: float) -> CategoryTag:
        category = Category.A_EXTREME if self.is_extreme(delta_y) else Category.B_TYPICAL
        return CategoryTag(index=index, delta_y=float(delta_y), category=category)

    def to_dict(self) -> dict[str, float]:
        return {"xi": self.xi, "mean": self.mean, "std": self.std, "z": self.z}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CategoryThreshold:
        return cls(xi=d["xi"], mean=d["mean"], std=d["std"], z=d["z"])


def _check_xi(xi: float) -> None:
    if not 0.0 < xi < 1.0:
        raise ValueError(f"xi must lie in (0, 1), got {xi}")


def fit_threshold(residual: np.ndarray | Sequence[float], xi: float = DEFAULT_XI) -> CategoryThreshold:
    """Fit the first-difference Gaussian of ``residual`` for confidence level ``xi``."""
    _check_xi(xi)
    values = np.asarray(residual, dtype=float)
    if values.size < 3:
        raise ValueError(f"tagging needs at least 3 values, got {values.size}")
    delta = np.diff(values)
    mean = float(delta.mean())
    std = float(delta.std())
    if std == 0.0:
        logger.warning("First differences have zero variance; every point is typical")
    return CategoryThreshold(xi=xi, mean=mean, std=std, z=float(norm.ppf(0.5 + xi / 2.0)))


def tag_categories(residual: np.ndarray | Sequence[float], xi: float = DEFAULT_XI) -> list[CategoryTag]:
    """Tag indices 1..len-1 by their first difference."""
    values = np.asarray(residual, dtype=float)
    threshold = fit_threshold(values, xi)
    delta = np.diff(values)
    tags = [threshold.tag(i + 1, d) for i, d in enumerate(delta)]
    logger.debug(
        "Tagged %d extreme of %d points (xi=%.3f, z=%.3f)",
        sum(t.is_extreme for t in tags), len(tags), xi, threshold.z,
    )
    return tags


@dataclass(frozen=True, eq=False)
class ReliefResult:
    """Optimised weights with the per-extreme-point margins that produced them."""

    weights: FeatureWeights
    margins: np.ndarray
    xi_used: float
    scaler: FeatureScaler
    extreme_indices: tuple[int, ...] = ()
    neighbour_indices: tuple[int, ...] = ()
    fallback: bool = field(default=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "xi": self.xi_used,
            "weights": self.weights.to_list(),
            "fallback": self.fallback,
            "scaler": self.scaler.to_dict(),
            "margins": [
                {"index": i, "nearest_typical": j, "margin": float(m)}
                for i, j, m in zip(self.extreme_indices, self.neighbour_indices, self.margins)
            ],
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def optimize_weights(
    features: Sequence[FeatureVector],
    tags: Sequence[CategoryTag],
    xi: float = DEFAULT_XI,
    standardize: bool = True,
) -> ReliefResult:
    """Relief margin weights for ``features`` given their category ``tags``.

    Features and tags are aligned by time index; features without a tag are
    ignored. Nearest typical neighbours are found under unweighted L1
    distance in (optionally standardised) feature space, ties going to the
    lowest time index.

    Raises:
        EmptyCategoryError: no extreme or no typical point among the tagged
            features. Callers fall back to ``FeatureWeights.uniform``.
    """
    by_index = {t.index: t for t in tags}
    rows = sorted(
        (fv.time_index, fv.values, by_index[fv.time_index].is_extreme)
        for fv in features
        if fv.time_index in by_index
    )
    if not rows:
        raise EmptyCategoryError("no feature vector has a category tag")
    indices = np.array([r[0] for r in rows])
    matrix = np.vstack([r[1] for r in rows])
    extreme = np.array([r[2] for r in rows], dtype=bool)
    if extreme.all() or not extreme.any():
        raise EmptyCategoryError(
            f"Relief needs both categories, got {int(extreme.sum())} extreme "
            f"and {int((~extreme).sum())} typical points"
        )

    dimension = matrix.shape[1]
    scaler = FeatureScaler.fit(matrix) if standardize else FeatureScaler.identity(dimension)
    scaled = scaler.transform(matrix)
    a_rows, b_rows = scaled[extreme], scaled[~extreme]
    b_indices = indices[~extreme]

    nearest = np.argmin(cdist(a_rows, b_rows, "cityblock"), axis=1)
    gaps = np.abs(a_rows - b_rows[nearest])
    z = gaps.sum(axis=0)
    total = float(np.linalg.norm(z))
    fallback = total <= 0.0 or not np.isfinite(total)
    if fallback:
        logger.warning("Relief margins vanish in every dimension; using uniform weights")
        weights = FeatureWeights.uniform(dimension)
    else:
        weights = FeatureWeights(z / total)

    logger.info(
        "Relief weights from %d extreme / %d typical points: %s",
        int(extreme.sum()), int((~extreme).sum()),
        np.array2string(weights.w, precision=3),
    )
    return ReliefResult(
        weights=weights,
        margins=gaps @ weights.w,
        xi_used=xi,
        scaler=scaler,
        extreme_indices=tuple(int(i) for i in indices[extreme]),
        neighbour_indices=tuple(int(i) for i in b_indices[nearest]),
        fallback=fallback,
    )


def uniform_weights(dimension: int) -> FeatureWeights:
    """Fallback weights when Relief cannot separate the categories."""
    return FeatureWeights.uniform(dimension)
