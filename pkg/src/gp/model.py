"""GP prior over the residual series: covariance, marginal likelihood, fitting.

The training objective is the negative log marginal likelihood without the
constant and the 1/2 factor, l = r^T C^-1 r + log|C| with r = y - M and
C = K + sigma_n^2 I. Parameters are searched in log-space so positivity
needs no constraints.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterable, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from src.errors import CovarianceError, FitError
from src.features.embed import FeatureConfig, FeatureScaler, FeatureVector, FeatureWeights
from src.features.relief import CategoryTag
from src.gp.kernels import Hyperparams, KernelKind, gram, sq_distances

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

JITTER_START = 1e-10
JITTER_MAX = 1e-6

# Log-space box for the optimiser; exp(+-12) spans any realistic traffic scale.
LOG_BOUND = 12.0


# -- training window --

@dataclass(frozen=True, eq=False)
class TrainingWindow:
    """Retained time indices with their residual targets and feature rows."""

    indices: np.ndarray
    targets: np.ndarray
    features: np.ndarray
    mean: float = 0.0

    def __post_init__(self) -> None:
        indices = np.array(self.indices, dtype=np.int64).reshape(-1)
        targets = np.array(self.targets, dtype=float).reshape(-1)
        features = np.atleast_2d(np.array(self.features, dtype=float))
        n = indices.size
        if n < 1:
            raise ValueError("a training window needs at least one point")
        if targets.size != n or features.shape[0] != n:
            raise ValueError(
                f"window length mismatch: {n} indices, {targets.size} targets, "
                f"{features.shape[0]} feature rows"
            )
        if not (np.all(np.isfinite(targets)) and np.all(np.isfinite(features))):
            raise ValueError("window targets and features must be finite")
        if not math.isfinite(self.mean):
            raise ValueError("window mean must be finite")
        for arr in (indices, targets, features):
            arr.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    def feature_vectors(self) -> list[FeatureVector]:
        return [FeatureVector(row, int(i)) for i, row in zip(self.indices, self.features)]

    def position(self, index: int) -> int:
        hits = np.flatnonzero(self.indices == index)
        if hits.size == 0:
            raise ValueError(f"time index {index} is not in the training window")
        return int(hits[0])

    def subset(self, positions: np.ndarray | list[int]) -> TrainingWindow:
        positions = np.asarray(positions, dtype=np.int64)
        return TrainingWindow(
            self.indices[positions], self.targets[positions], self.features[positions], self.mean
        )

    def append(self, vector: FeatureVector, target: float) -> TrainingWindow:
        """New window with one more point at the end."""
        if vector.dimension != self.dimension:
            raise ValueError(f"feature dimension {vector.dimension} != {self.dimension}")
        return TrainingWindow(
            np.append(self.indices, vector.time_index),
            np.append(self.targets, target),
            np.vstack([self.features, vector.values]),
            self.mean,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "indices": [int(i) for i in self.indices],
            "targets": [float(y) for y in self.targets],
            "features": [[float(x) for x in row] for row in self.features],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainingWindow:
        return cls(d["indices"], d["targets"], d["features"], d.get("mean", 0.0))


# -- kernel inputs --

def kernel_inputs(
    window: TrainingWindow, kind: KernelKind, scaler: FeatureScaler | None = None
) -> np.ndarray:
    """Rows the kernel compares: scaled features, or the time indices."""
    if kind == KernelKind.NAIVE_TIME:
        return window.indices.astype(float)[:, np.newaxis]
    if scaler is None:
        return window.features
    return scaler.transform(window.features)


def kernel_weights(weights: FeatureWeights | None, kind: KernelKind) -> np.ndarray | None:
    if kind == KernelKind.NAIVE_TIME or weights is None:
        return None
    return weights.w


# -- covariance --

class CovarianceFactor(NamedTuple):
    chol: np.ndarray
    jitter: float


def factorize(cov: np.ndarray, signal_var: float) -> CovarianceFactor:
    """Lower Cholesky factor of ``cov``, escalating diagonal jitter on failure.

    Jitter starts at 0 and then runs 1e-10 * sigma^2, x10 per retry, up to
    1e-6 * sigma^2.
    """
    jitter = 0.0
    n = cov.shape[0]
    while True:
        try:
            chol = cholesky(cov + jitter * np.eye(n), lower=True, check_finite=True)
        except (LinAlgError, ValueError):
            chol = None
        if chol is not None:
            if jitter > 0:
                logger.debug("Cholesky needed jitter %.3g (n=%d)", jitter, n)
            return CovarianceFactor(chol, jitter)
        jitter = JITTER_START * signal_var if jitter == 0 else jitter * 10
        if jitter > JITTER_MAX * signal_var * (1 + 1e-9):
            raise CovarianceError(
                f"covariance of size {n} is not positive definite even with jitter "
                f"{JITTER_MAX:.0e} * sigma^2"
            )


def build_covariance(
    window: TrainingWindow,
    weights: FeatureWeights | None,
    h: Hyperparams,
    kind: KernelKind = KernelKind.FEATURE_EMBEDDED,
    scaler: FeatureScaler | None = None,
) -> np.ndarray:
    """C = K + sigma_n^2 I, plus whatever jitter its Cholesky factor needed.

    Raises:
        CovarianceError: not factorisable at the maximum jitter.
    """
    x = kernel_inputs(window, kind, scaler)
    cov = gram(x, None, kernel_weights(weights, kind), h)
    cov[np.diag_indices_from(cov)] += h.noise_var
    jitter = factorize(cov, h.signal_var).jitter
    if jitter:
        cov[np.diag_indices_from(cov)] += jitter
    return cov


def nlml(
    window: TrainingWindow,
    weights: FeatureWeights | None,
    h: Hyperparams,
    kind: KernelKind = KernelKind.FEATURE_EMBEDDED,
    scaler: FeatureScaler | None = None,
) -> float:
    """(y - M)^T C^-1 (y - M) + log det C."""
    x = kernel_inputs(window, kind, scaler)
    cov = gram(x, None, kernel_weights(weights, kind), h)
    cov[np.diag_indices_from(cov)] += h.noise_var
    chol = factorize(cov, h.signal_var).chol
    r = window.targets - window.mean
    alpha = cho_solve((chol, True), r)
    value = float(r @ alpha + 2.0 * np.sum(np.log(np.diag(chol))))
    if not math.isfinite(value):
        raise FitError(f"non-finite objective at {h}")
    return value


def nlml_and_grad(
    theta: np.ndarray,
    window: TrainingWindow,
    weights: FeatureWeights | None,
    kind: KernelKind = KernelKind.FEATURE_EMBEDDED,
    scaler: FeatureScaler | None = None,
    fixed_noise: float | None = None,
) -> tuple[float, np.ndarray]:
    """Objective and its gradient in log-space.

    ``theta`` is (log sigma, log beta, log sigma_n), or (log sigma, log beta)
    when ``fixed_noise`` pins sigma_n. The gradient is
    -tr((alpha alpha^T - C^-1) dC/dtheta) with alpha = C^-1 (y - M).
    """
    theta = np.asarray(theta, dtype=float)
    sigma, beta = np.exp(theta[:2])
    sigma_n = fixed_noise if fixed_noise is not None else float(np.exp(theta[2]))

    x = kernel_inputs(window, kind, scaler)
    d2 = sq_distances(x, None, kernel_weights(weights, kind))
    k = sigma**2 * np.exp(-d2 / (2.0 * beta**2))
    cov = k.copy()
    cov[np.diag_indices_from(cov)] += sigma_n**2
    chol = factorize(cov, sigma**2).chol

    r = window.targets - window.mean
    alpha = cho_solve((chol, True), r)
    value = float(r @ alpha + 2.0 * np.sum(np.log(np.diag(chol))))

    c_inv = cho_solve((chol, True), np.eye(len(r)))
    inner = np.outer(alpha, alpha) - c_inv
    grads = [
        -np.sum(inner * (2.0 * k)),
        -np.sum(inner * (k * d2 / beta**2)),
    ]
    if fixed_noise is None:
        grads.append(-2.0 * sigma_n**2 * np.trace(inner))
    grad = np.array(grads)
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise FitError(f"non-finite objective at sigma={sigma:.3g} beta={beta:.3g}")
    return value, grad


# -- fitting --

class Optimizer(str, Enum):
    LBFGS = "lbfgs"
    GRADIENT_DESCENT = "gradient_descent"


class FitOptions(BaseModel):
    """Hyper-parameter search settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    restarts: int = Field(5, ge=1, description="Number of optimiser starts")
    seed: int = Field(0, description="Seed for the perturbed starting points")
    optimizer: Optimizer = Optimizer.LBFGS
    max_iter: int = Field(200, ge=1)
    tol: float = Field(1e-6, gt=0, description="Gradient tolerance")
    fix_noise: bool = Field(False, description="Pin sigma_n to the first-difference estimate")


@dataclass(frozen=True)
class RestartOutcome:
    restart: int
    start: tuple[float, ...]
    objective: float | None
    hyper: Hyperparams | None
    iterations: int = 0
    converged: bool = False
    error: str | None = None


@dataclass(frozen=True)
class FitResult:
    hyper: Hyperparams
    objective: float
    start_objective: float
    restarts: tuple[RestartOutcome, ...] = field(default_factory=tuple)


def noise_estimate(targets: np.ndarray) -> float:
    """sigma_n from first differences: sqrt(mean(diff(y)^2) / 2)."""
    diffs = np.diff(np.asarray(targets, dtype=float))
    if diffs.size == 0:
        return 0.0
    return float(np.sqrt(0.5 * np.mean(diffs**2)))


def _initial_theta(x: np.ndarray, w: np.ndarray | None, targets: np.ndarray) -> np.ndarray:
    spread = float(np.std(targets)) or 1.0
    d2 = sq_distances(x, None, w)
    off_diag = d2[np.triu_indices_from(d2, k=1)]
    positive = off_diag[off_diag > 0]
    scale = float(np.sqrt(np.median(positive))) if positive.size else 1.0
    return np.log([spread, scale, 0.3 * spread])


def _gradient_descent(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, float, int, bool]:
    """Steepest descent with Armijo backtracking, clipped to the log box."""
    value, grad = fun(theta)
    step = 1.0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            return theta, value, it - 1, True
        step = min(1.0, step * 2.0)
        while True:
            candidate = np.clip(theta - step * grad, -LOG_BOUND, LOG_BOUND)
            try:
                cand_value, cand_grad = fun(candidate)
            except (CovarianceError, FitError):
                cand_value, cand_grad = math.inf, grad
            if cand_value <= value - 1e-4 * float(grad @ (theta - candidate)):
                break
            step *= 0.5
            if step < 1e-12:
                return theta, value, it, True
        if value - cand_value < tol * max(1.0, abs(value)) * 1e-3:
            return candidate, cand_value, it, True
        theta, value, grad = candidate, cand_value, cand_grad
    return theta, value, max_iter, False


def fit_with_trace(
    window: TrainingWindow,
    weights: FeatureWeights | None,
    kind: KernelKind = KernelKind.FEATURE_EMBEDDED,
    opts: FitOptions | None = None,
    scaler: FeatureScaler | None = None,
    start: Hyperparams | None = None,
) -> FitResult:
    """Multi-start NLML minimisation; returns the best restart with its trace.

    Restart 0 starts at ``start`` (or a data-driven guess), later restarts
    perturb that guess with ``default_rng([seed, restart])``.

    Raises:
        FitError: fewer than two points, or every restart failed.
    """
    opts = opts or FitOptions()
    if len(window) < 2:
        raise FitError(f"fitting needs at least 2 points, got {len(window)}")

    x = kernel_inputs(window, kind, scaler)
    fixed = noise_estimate(window.targets) if opts.fix_noise else None
    base = start.to_log() if start is not None else _initial_theta(
        x, kernel_weights(weights, kind), window.targets - window.mean
    )
    if fixed is not None:
        base = base[:2]
    base = np.clip(base, -LOG_BOUND, LOG_BOUND)

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        return nlml_and_grad(theta, window, weights, kind, scaler, fixed)

    def to_hyper(theta: np.ndarray) -> Hyperparams:
        sigma, beta = np.exp(theta[:2])
        sigma_n = fixed if fixed is not None else float(np.exp(theta[2]))
        return Hyperparams(float(sigma), float(beta), sigma_n)

    outcomes: list[RestartOutcome] = []
    start_objective = math.nan
    for restart in range(opts.restarts):
        theta0 = base.copy()
        if restart > 0:
            rng = np.random.default_rng([opts.seed, restart])
            theta0 = np.clip(theta0 + rng.normal(0.0, 1.0, theta0.size), -LOG_BOUND, LOG_BOUND)
        try:
            f0, _ = objective(theta0)
            if restart == 0:
                start_objective = f0
            if opts.optimizer == Optimizer.LBFGS:
                res = minimize(
                    objective,
                    theta0,
                    jac=True,
                    method="L-BFGS-B",
                    bounds=[(-LOG_BOUND, LOG_BOUND)] * theta0.size,
                    options={"maxiter": opts.max_iter, "gtol": opts.tol, "ftol": 1e-12},
                )
                theta, value, iters, ok = res.x, float(res.fun), int(res.nit), bool(res.success)
            else:
                theta, value, iters, ok = _gradient_descent(objective, theta0, opts.max_iter, opts.tol)
            if value > f0:
                theta, value = theta0, f0
            outcome = RestartOutcome(restart, tuple(theta0), value, to_hyper(theta), iters, ok)
        except (CovarianceError, FitError, LinAlgError) as e:
            outcome = RestartOutcome(restart, tuple(theta0), None, None, error=str(e))
        logger.debug(
            "Restart %d: objective=%s converged=%s error=%s",
            restart, outcome.objective, outcome.converged, outcome.error,
        )
        outcomes.append(outcome)

    finished = [o for o in outcomes if o.objective is not None]
    if not finished:
        raise FitError(f"all {opts.restarts} restarts failed: {outcomes[-1].error}")
    if not any(o.converged for o in finished):
        logger.warning("No restart reached the gradient tolerance; using the best iterate")
    best = min(finished, key=lambda o: (o.objective, o.restart))
    logger.info(
        "Fitted %s kernel on %d points: sigma=%.4g beta=%.4g sigma_n=%.4g (nlml %.4f)",
        kind.value, len(window), best.hyper.sigma, best.hyper.beta, best.hyper.sigma_n,
        best.objective,
    )
    return FitResult(best.hyper, float(best.objective), float(start_objective), tuple(outcomes))


def fit(
    window: TrainingWindow,
    weights: FeatureWeights | None,
    kind: KernelKind = KernelKind.FEATURE_EMBEDDED,
    opts: FitOptions | None = None,
    scaler: FeatureScaler | None = None,
    start: Hyperparams | None = None,
) -> Hyperparams:
    return fit_with_trace(window, weights, kind, opts, scaler, start).hyper


# -- pruning --

class PrunePolicy(BaseModel):
    """Training-window size cap and the share of it reserved for extreme points."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_size: int = Field(672, ge=1, description="Largest retained window")
    extreme_keep_fraction: float = Field(0.5, ge=0.0, le=1.0)


def prune(
    window: TrainingWindow, tags: Iterable[CategoryTag], policy: PrunePolicy
) -> TrainingWindow:
    """Cap ``window`` at ``policy.max_size`` points, keeping chronological order.

    With a zero extreme fraction the oldest points go first. Otherwise the
    most recent floor(fraction * max_size) extreme points are kept, the rest
    is filled with the most recent typical points, and any shortfall with
    further extreme points. Untagged points count as typical.
    """
    n, cap = len(window), policy.max_size
    if n <= cap:
        return window
    if policy.extreme_keep_fraction == 0:
        keep = np.arange(n - cap, n)
    else:
        extreme_idx = {t.index for t in tags if t.is_extreme}
        is_extreme = np.array([int(i) in extreme_idx for i in window.indices])
        a_pos = np.flatnonzero(is_extreme)
        b_pos = np.flatnonzero(~is_extreme)
        quota = min(math.floor(policy.extreme_keep_fraction * cap), a_pos.size)
        keep_a = a_pos[a_pos.size - quota :]
        room = cap - keep_a.size
        keep_b = b_pos[max(b_pos.size - room, 0) :]
        short = cap - keep_a.size - keep_b.size
        older_a = a_pos[: a_pos.size - quota]
        extra_a = older_a[older_a.size - short :] if short > 0 else older_a[:0]
        keep = np.sort(np.concatenate([extra_a, keep_a, keep_b]))
    logger.debug("Pruned window from %d to %d points", n, keep.size)
    return window.subset(keep)


# -- fitted model --

@dataclass(frozen=True, eq=False)
class FegpModel:
    """A fitted GP over one training window. Immutable; the factor is cached."""

    window: TrainingWindow
    weights: FeatureWeights | None
    hyper: Hyperparams
    kernel_kind: KernelKind = KernelKind.FEATURE_EMBEDDED
    scaler: FeatureScaler | None = None
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self) -> None:
        if self.kernel_kind == KernelKind.FEATURE_EMBEDDED:
            if self.weights is None:
                raise ValueError("feature-embedded models need feature weights")
            if self.weights.dimension != self.window.dimension:
                raise ValueError(
                    f"weights of dimension {self.weights.dimension} for features of "
                    f"dimension {self.window.dimension}"
                )

    def inputs(self) -> np.ndarray:
        return kernel_inputs(self.window, self.kernel_kind, self.scaler)

    def query_inputs(self, query: FeatureVector | float) -> np.ndarray:
        """One kernel input row for a forecast point."""
        if self.kernel_kind == KernelKind.NAIVE_TIME:
            t = query.time_index if isinstance(query, FeatureVector) else query
            return np.array([[float(t)]])
        if not isinstance(query, FeatureVector):
            raise TypeError("feature-embedded models are queried with a FeatureVector")
        row = query.values[np.newaxis, :]
        return row if self.scaler is None else self.scaler.transform(row)

    def cross_cov(self, query: FeatureVector | float) -> np.ndarray:
        return gram(
            self.query_inputs(query), self.inputs(),
            kernel_weights(self.weights, self.kernel_kind), self.hyper,
        )[0]

    @cached_property
    def factor(self) -> CovarianceFactor:
        cov = gram(self.inputs(), None, kernel_weights(self.weights, self.kernel_kind), self.hyper)
        cov[np.diag_indices_from(cov)] += self.hyper.noise_var
        return factorize(cov, self.hyper.signal_var)

    @cached_property
    def alpha(self) -> np.ndarray:
        return cho_solve((self.factor.chol, True), self.window.targets - self.window.mean)

    def whiten(self, k: np.ndarray) -> np.ndarray:
        """L^-1 k for the cached lower factor L."""
        return solve_triangular(self.factor.chol, k, lower=True)

    def with_window(self, window: TrainingWindow) -> FegpModel:
        return FegpModel(window, self.weights, self.hyper, self.kernel_kind, self.scaler, self.feature_config)

    def with_hyper(self, hyper: Hyperparams) -> FegpModel:
        return FegpModel(self.window, self.weights, hyper, self.kernel_kind, self.scaler, self.feature_config)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kernel_kind": self.kernel_kind.value,
            "hyper": self.hyper.to_dict(),
            "weights": self.weights.to_list() if self.weights is not None else None,
            "scaler": self.scaler.to_dict() if self.scaler is not None else None,
            "feature_config": self.feature_config.model_dump(mode="json"),
            "window": self.window.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FegpModel:
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        return cls(
            window=TrainingWindow.from_dict(d["window"]),
            weights=FeatureWeights(d["weights"]) if d.get("weights") is not None else None,
            hyper=Hyperparams.from_dict(d["hyper"]),
            kernel_kind=KernelKind(d["kernel_kind"]),
            scaler=FeatureScaler.from_dict(d["scaler"]) if d.get("scaler") is not None else None,
            feature_config=FeatureConfig(**d.get("feature_config", {})),
        )


def save_model(model: FegpModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=2)
    logger.info("Saved %s model (%d points) to %s", model.kernel_kind.value, len(model.window), path)


def load_model(path: str | Path) -> FegpModel:
    with open(path, encoding="utf-8") as f:
        return FegpModel.from_dict(json.load(f))
