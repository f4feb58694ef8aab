"""Covariance functions.

The feature-embedded kernel is a squared-exponential over weighted feature
vectors. The naive kernel is the same form over the time axis, which is how
both kernel kinds share one vectorised ``gram``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from src.features.embed import FeatureVector, FeatureWeights


class KernelKind(str, Enum):
    FEATURE_EMBEDDED = "feature_embedded"
    NAIVE_TIME = "naive_time"


@dataclass(frozen=True)
class Hyperparams:
    """Amplitude ``sigma``, length-scale ``beta`` and noise std ``sigma_n``."""

    sigma: float
    beta: float
    sigma_n: float

    def __post_init__(self) -> None:
        for name in ("sigma", "beta", "sigma_n"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.sigma <= 0 or self.beta <= 0:
            raise ValueError(f"sigma and beta must be positive, got {self.sigma}, {self.beta}")
        if self.sigma_n < 0:
            raise ValueError(f"sigma_n must be nonnegative, got {self.sigma_n}")

    @property
    def signal_var(self) -> float:
        return self.sigma**2

    @property
    def noise_var(self) -> float:
        return self.sigma_n**2

    def to_log(self) -> np.ndarray:
        """(log sigma, log beta, log sigma_n). ``sigma_n`` must be positive."""
        return np.log([self.sigma, self.beta, self.sigma_n])

    @classmethod
    def from_log(cls, theta: np.ndarray) -> Hyperparams:
        sigma, beta, sigma_n = np.exp(np.asarray(theta, dtype=float))
        return cls(float(sigma), float(beta), float(sigma_n))

    def to_dict(self) -> dict[str, float]:
        return {"sigma": self.sigma, "beta": self.beta, "sigma_n": self.sigma_n}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Hyperparams:
        return cls(sigma=d["sigma"], beta=d["beta"], sigma_n=d["sigma_n"])


def sq_distances(
    a: np.ndarray, b: np.ndarray | None = None, w: np.ndarray | None = None
) -> np.ndarray:
    """Squared Euclidean distances between the weighted rows of ``a`` and ``b``.

    With ``b`` omitted the result is the exactly symmetric self-distance matrix.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if w is not None:
        a = a * w
    if b is None:
        return squareform(pdist(a, "sqeuclidean"))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if w is not None:
        b = b * w
    return cdist(a, b, "sqeuclidean")


def gram(
    a: np.ndarray,
    b: np.ndarray | None,
    w: FeatureWeights | np.ndarray | None,
    h: Hyperparams,
) -> np.ndarray:
    """Kernel matrix sigma^2 exp(-|w*a - w*b|^2 / (2 beta^2)) for all row pairs."""
    weights = w.w if isinstance(w, FeatureWeights) else w
    d2 = sq_distances(a, b, weights)
    return h.signal_var * np.exp(-d2 / (2.0 * h.beta**2))


def kernel(a: FeatureVector, b: FeatureVector, w: FeatureWeights, h: Hyperparams) -> float:
    if not a.dimension == b.dimension == w.dimension:
        raise ValueError(
            f"dimension mismatch: {a.dimension}, {b.dimension}, weights {w.dimension}"
        )
    return float(gram(a.values, b.values, w, h)[0, 0])


def naive_kernel(t_i: float, t_j: float, h: Hyperparams) -> float:
    return float(h.signal_var * math.exp(-((t_i - t_j) ** 2) / (2.0 * h.beta**2)))
