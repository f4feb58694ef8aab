"""One-step-ahead posteriors, MAP point forecasts and interval risk."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from src.features.embed import FeatureVector, featurize
from src.gp.kernels import KernelKind
from src.gp.model import FegpModel

logger = logging.getLogger(__name__)

DEFAULT_MAP_GRID = 4096

# Relative PDF difference under which two candidate modes count as tied.
MODE_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class PosteriorComponent:
    mu: float
    var: float
    source_index: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"mu": self.mu, "var": self.var, "source_index": self.source_index}


@dataclass(frozen=True, eq=False)
class MixturePosterior:
    """Equal-weight Gaussian mixture, one component per training point."""

    mus: np.ndarray
    variances: np.ndarray
    source_indices: np.ndarray

    def __post_init__(self) -> None:
        mus = np.array(self.mus, dtype=float).reshape(-1)
        variances = np.array(self.variances, dtype=float).reshape(-1)
        sources = np.array(self.source_indices, dtype=np.int64).reshape(-1)
        if mus.size < 1 or variances.size != mus.size or sources.size != mus.size:
            raise ValueError("a mixture needs n >= 1 components with matching fields")
        if np.any(variances <= 0) or not np.all(np.isfinite(mus)):
            raise ValueError("mixture components need finite means and positive variances")
        for arr in (mus, variances, sources):
            arr.setflags(write=False)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "source_indices", sources)

    @classmethod
    def from_components(cls, components: Sequence[PosteriorComponent]) -> MixturePosterior:
        return cls(
            [c.mu for c in components],
            [c.var for c in components],
            [c.source_index if c.source_index is not None else -1 for c in components],
        )

    def __len__(self) -> int:
        return int(self.mus.size)

    @property
    def components(self) -> tuple[PosteriorComponent, ...]:
        return tuple(
            PosteriorComponent(float(m), float(v), int(i))
            for m, v, i in zip(self.mus, self.variances, self.source_indices)
        )

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def component_pdfs(self, x: np.ndarray | float) -> np.ndarray:
        """Per-component densities, shape (len(x), n)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return norm.pdf(x[:, np.newaxis], self.mus, self.stds)

    def pdf(self, x: np.ndarray | float) -> np.ndarray | float:
        values = self.component_pdfs(x).mean(axis=1)
        return float(values[0]) if np.ndim(x) == 0 else values

    def cdf(self, x: np.ndarray | float) -> np.ndarray | float:
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        values = norm.cdf(x_arr[:, np.newaxis], self.mus, self.stds).mean(axis=1)
        return float(values[0]) if np.ndim(x) == 0 else values

    def mean(self) -> float:
        return float(self.mus.mean())

    def var(self) -> float:
        return float(np.mean(self.variances + self.mus**2) - self.mean() ** 2)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        picks = rng.integers(0, len(self), size)
        return rng.normal(self.mus[picks], self.stds[picks])


@dataclass(frozen=True)
class GaussianPosterior:
    mu: float
    var: float

    def __post_init__(self) -> None:
        if not (self.var > 0 and math.isfinite(self.mu)):
            raise ValueError(f"invalid Gaussian posterior N({self.mu}, {self.var})")

    def pdf(self, x: np.ndarray | float) -> np.ndarray | float:
        return norm.pdf(x, self.mu, math.sqrt(self.var))

    def cdf(self, x: np.ndarray | float) -> np.ndarray | float:
        return norm.cdf(x, self.mu, math.sqrt(self.var))

    def mean(self) -> float:
        return self.mu

    @property
    def components(self) -> tuple[PosteriorComponent, ...]:
        return (PosteriorComponent(self.mu, self.var, None),)


Posterior = MixturePosterior | GaussianPosterior


@dataclass(frozen=True)
class RiskReport:
    """Probability mass below, inside and above a demand interval."""

    low: float
    high: float
    prob_below: float
    prob_within: float
    prob_above: float

    def to_dict(self) -> dict[str, float]:
        return {
            "low": self.low,
            "high": self.high,
            "prob_below": self.prob_below,
            "prob_within": self.prob_within,
            "prob_above": self.prob_above,
        }


# -- conditioning --

def _variance_bounds(model: FegpModel) -> tuple[float, float]:
    h = model.hyper
    return max(h.noise_var, 1e-10 * h.signal_var), h.noise_var + h.signal_var


def _components(model: FegpModel, k_f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-point conditionals given the cross-covariances ``k_f``.

    Both kernels are stationary so k(t_i, t_i) = k(t_f, t_f) = sigma^2.
    """
    h = model.hyper
    window = model.window
    denom = h.signal_var + h.noise_var
    mus = window.mean + k_f / denom * (window.targets - window.mean)
    variances = h.noise_var + h.signal_var - k_f**2 / denom
    return mus, np.clip(variances, *_variance_bounds(model))


def component(model: FegpModel, f_features: FeatureVector | float, i: int) -> PosteriorComponent:
    """Conditional of the forecast point on the single training point with time index ``i``."""
    pos = model.window.position(i)
    k_f = model.cross_cov(f_features)[pos : pos + 1]
    mus, variances = _components(model, k_f)
    return PosteriorComponent(float(mus[0]), float(variances[0]), int(i))


def mixture_for(model: FegpModel, f_features: FeatureVector | float) -> MixturePosterior:
    mus, variances = _components(model, model.cross_cov(f_features))
    return MixturePosterior(mus, variances, model.window.indices)


def predict_fegp(
    model: FegpModel, recent_history: np.ndarray | Sequence[float], time_index: int | None = None
) -> MixturePosterior:
    """Mixture posterior of the value right after ``recent_history``.

    Raises:
        InsufficientHistoryError: fewer than ``lag_depth`` values supplied.
    """
    history = np.asarray(recent_history, dtype=float)
    f_features = featurize(history, history.size, model.feature_config)
    if time_index is not None:
        f_features = FeatureVector(f_features.values, time_index)
    return mixture_for(model, f_features)


def predict_naive(model: FegpModel, t_f: float) -> GaussianPosterior:
    """Full GP conditioning on every window point for the time-axis kernel."""
    if model.kernel_kind != KernelKind.NAIVE_TIME:
        raise ValueError("predict_naive needs a naive_time model")
    k_star = model.cross_cov(t_f)
    mu = model.window.mean + float(k_star @ model.alpha)
    v = model.whiten(k_star)
    var = model.hyper.signal_var + model.hyper.noise_var - float(v @ v)
    low, high = _variance_bounds(model)
    return GaussianPosterior(mu, float(np.clip(var, low, high)))


# -- point forecast and risk --

def map_point(post: Posterior, grid: int = DEFAULT_MAP_GRID) -> float:
    """Value of highest posterior density.

    Mixtures are searched on an even grid spanning four standard deviations
    beyond the outermost means; every grid local maximum is then refined
    against the analytic PDF with scipy's bounded Brent search, which is
    golden-section search with parabolic interpolation steps, inside one
    grid step either side. Exact ties go to the lower value.
    """
    if isinstance(post, GaussianPosterior):
        return float(post.mu)
    if len(post) == 1:
        return float(post.mus[0])

    # canonical order so the result does not depend on component order
    order = np.lexsort((post.variances, post.mus))
    ordered = MixturePosterior(post.mus[order], post.variances[order], post.source_indices[order])
    spread = 4.0 * float(ordered.stds.max())
    xs = np.linspace(float(ordered.mus.min()) - spread, float(ordered.mus.max()) + spread, grid)
    step = xs[1] - xs[0]
    density = ordered.pdf(xs)

    interior = (density[1:-1] >= density[:-2]) & (density[1:-1] >= density[2:])
    peaks = np.flatnonzero(interior) + 1
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(density))])

    def neg_pdf(x: float) -> float:
        return -float(ordered.pdf(x))

    candidates: list[tuple[float, float]] = []
    for p in peaks:
        res = minimize_scalar(
            neg_pdf,
            bounds=(xs[p] - step, xs[p] + step),
            method="bounded",
            options={"xatol": 1e-10 * max(1.0, abs(xs[p]))},
        )
        x, fx = (float(res.x), -float(res.fun)) if -res.fun >= density[p] else (float(xs[p]), float(density[p]))
        candidates.append((x, fx))

    top = max(fx for _, fx in candidates)
    tied = [x for x, fx in candidates if fx >= top * (1 - MODE_TIE_RTOL)]
    return min(tied)


def risk(post: Posterior, low: float, high: float) -> RiskReport:
    """Posterior mass below ``low``, within [low, high] and above ``high``."""
    if low > high:
        raise ValueError(f"risk interval needs low <= high, got ({low}, {high})")
    below = float(np.clip(post.cdf(low), 0.0, 1.0))
    above = float(np.clip(1.0 - post.cdf(high), 0.0, 1.0))
    within = max(1.0 - below - above, 0.0)
    return RiskReport(float(low), float(high), below, within, above)


def forecast_record(
    index: int,
    post: Posterior,
    map_value: float,
    risks: Sequence[RiskReport] = (),
    top_k: int | None = None,
    actual: float | None = None,
) -> dict[str, Any]:
    """JSON-ready record of one forecast step.

    With ``top_k`` only the components contributing most density at the MAP
    value are listed and ``truncated`` is set.
    """
    comps = post.components
    truncated = False
    if top_k is not None and top_k < len(comps):
        contrib = np.array([norm.pdf(map_value, c.mu, math.sqrt(c.var)) for c in comps])
        keep = sorted(np.argsort(-contrib, kind="stable")[:top_k])
        comps = tuple(comps[i] for i in keep)
        truncated = True
    record: dict[str, Any] = {"index": int(index), "map": float(map_value)}
    if actual is not None:
        record["actual"] = float(actual)
    record["components"] = [c.to_dict() for c in comps]
    record["truncated"] = truncated
    record["risk"] = [r.to_dict() for r in risks]
    return record
