"""Seasonal ARIMA baseline fitted by conditional sum of squares.

The model is phi(B) Phi(B^s) (w_t - mu) = theta(B) Theta(B^s) e_t with
w = (1-B)^d (1-B^s)^D y. The mean mu is only estimated when the series is
not differenced. Pre-sample residuals are zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize
from scipy.signal import lfilter

from src.errors import FitError, InsufficientHistoryError

logger = logging.getLogger(__name__)

ROOT_MARGIN = 1.01
PENALTY_WEIGHT = 100.0


class SarimaOrder(BaseModel):
    """(p, d, q)(P, D, Q)_s."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    p: int = Field(1, ge=0)
    d: int = Field(0, ge=0)
    q: int = Field(1, ge=0)
    P: int = Field(0, ge=0)
    D: int = Field(1, ge=0)
    Q: int = Field(1, ge=0)
    s: int = Field(96, ge=1, description="Season length in slots")

    @classmethod
    def from_lists(cls, order: Sequence[int], seasonal: Sequence[int]) -> SarimaOrder:
        p, d, q = order
        P, D, Q, s = seasonal
        return cls(p=p, d=d, q=q, P=P, D=D, Q=Q, s=s)

    @property
    def n_coefficients(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def has_mean(self) -> bool:
        return self.d == 0 and self.D == 0

    @property
    def lost(self) -> int:
        """Values consumed by differencing."""
        return self.d + self.D * self.s

    @property
    def min_history(self) -> int:
        return max(self.p + self.s * self.P, self.q + self.s * self.Q) + self.lost

    def __str__(self) -> str:
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q})_{self.s}"


def _seasonal(coefs: Sequence[float], s: int, sign: float) -> np.ndarray:
    poly = np.zeros(len(coefs) * s + 1)
    poly[0] = 1.0
    for k, c in enumerate(coefs, start=1):
        poly[k * s] = sign * c
    return poly


def ar_polynomial(phi: Sequence[float], Phi: Sequence[float], s: int) -> np.ndarray:
    """Coefficients of phi(B) Phi(B^s) in increasing powers of B, leading 1."""
    return np.convolve(_seasonal(phi, 1, -1.0), _seasonal(Phi, s, -1.0))


def ma_polynomial(theta: Sequence[float], Theta: Sequence[float], s: int) -> np.ndarray:
    return np.convolve(_seasonal(theta, 1, 1.0), _seasonal(Theta, s, 1.0))


def difference_polynomial(d: int, D: int, s: int) -> np.ndarray:
    poly = np.ones(1)
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    for _ in range(D):
        poly = np.convolve(poly, _seasonal([1.0], s, -1.0))
    return poly


def difference(series: np.ndarray | Sequence[float], d: int, D: int, s: int) -> np.ndarray:
    """Apply (1-B)^d (1-B^s)^D. Output is ``d + D*s`` values shorter."""
    values = np.asarray(series, dtype=float)
    if values.size <= d + D * s:
        raise InsufficientHistoryError(
            f"differencing d={d}, D={D}, s={s} needs more than {d + D * s} values, got {values.size}"
        )
    for _ in range(d):
        values = np.diff(values)
    for _ in range(D):
        values = values[s:] - values[:-s]
    return values


def integrate(
    differenced: np.ndarray | Sequence[float],
    history: np.ndarray | Sequence[float],
    d: int,
    D: int,
    s: int,
) -> np.ndarray:
    """Undo ``difference``: original-scale values that continue ``history``."""
    delta = difference_polynomial(d, D, s)
    lag = delta.size - 1
    hist = np.asarray(history, dtype=float)
    if hist.size < lag:
        raise InsufficientHistoryError(f"integration needs {lag} history values, got {hist.size}")
    w = np.asarray(differenced, dtype=float)
    out = np.concatenate([hist, np.empty(w.size)])
    for i, value in enumerate(w):
        t = hist.size + i
        out[t] = value - float(delta[1:] @ out[t - 1 :: -1][:lag]) if lag else value
    return out[hist.size :]


@dataclass(frozen=True)
class SarimaModel:
    order: SarimaOrder
    phi: tuple[float, ...] = ()
    theta: tuple[float, ...] = ()
    Phi: tuple[float, ...] = ()
    Theta: tuple[float, ...] = ()
    intercept: float = 0.0
    resid_var: float = 1.0
    css_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        o = self.order
        sizes = (len(self.phi), len(self.theta), len(self.Phi), len(self.Theta))
        if sizes != (o.p, o.q, o.P, o.Q):
            raise ValueError(f"coefficient counts {sizes} do not match order {o}")
        coefs = (*self.phi, *self.theta, *self.Phi, *self.Theta, self.intercept)
        if not all(math.isfinite(c) for c in coefs):
            raise ValueError("SARIMA coefficients must be finite")
        if not (math.isfinite(self.resid_var) and self.resid_var >= 0):
            raise ValueError(f"residual variance must be finite and nonnegative, got {self.resid_var}")

    @property
    def ar_poly(self) -> np.ndarray:
        return ar_polynomial(self.phi, self.Phi, self.order.s)

    @property
    def ma_poly(self) -> np.ndarray:
        return ma_polynomial(self.theta, self.Theta, self.order.s)

    def residuals(self, history: np.ndarray | Sequence[float]) -> np.ndarray:
        """CSS residuals on the differenced ``history`` (zero before enough lags exist)."""
        o = self.order
        w = difference(history, o.d, o.D, o.s) - self.intercept
        return _css_residuals(w, self.ar_poly, self.ma_poly)

    def to_dict(self) -> dict:
        return {
            "order": self.order.model_dump(),
            "phi": list(self.phi),
            "theta": list(self.theta),
            "Phi": list(self.Phi),
            "Theta": list(self.Theta),
            "intercept": self.intercept,
            "resid_var": self.resid_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SarimaModel:
        return cls(
            order=SarimaOrder(**d["order"]),
            phi=tuple(d["phi"]),
            theta=tuple(d["theta"]),
            Phi=tuple(d["Phi"]),
            Theta=tuple(d["Theta"]),
            intercept=d["intercept"],
            resid_var=d["resid_var"],
        )


def _css_residuals(w: np.ndarray, ar_poly: np.ndarray, ma_poly: np.ndarray) -> np.ndarray:
    ncond = ar_poly.size - 1
    u = lfilter(ar_poly, [1.0], w)
    u[:ncond] = 0.0
    return lfilter([1.0], ma_poly, u)


def _root_penalty(poly: np.ndarray) -> float:
    """Squared shortfall of every root of ``poly`` below the unit-circle margin."""
    trimmed = np.trim_zeros(poly, "b")
    if trimmed.size <= 1:
        return 0.0
    moduli = np.abs(np.roots(trimmed[::-1]))
    return float(np.sum(np.clip(ROOT_MARGIN - moduli, 0.0, None) ** 2))


def _unpack(params: np.ndarray, order: SarimaOrder) -> tuple[np.ndarray, ...]:
    cuts = np.cumsum([order.p, order.q, order.P, order.Q])
    phi, theta, Phi, Theta, rest = np.split(params, cuts)
    mu = float(rest[0]) if rest.size else 0.0
    return phi, theta, Phi, Theta, mu


def fit_sarima(
    series: np.ndarray | Sequence[float], order: SarimaOrder, max_iter: int = 500
) -> SarimaModel:
    """Minimise the conditional sum of squares from a zero start.

    Raises:
        InsufficientHistoryError: fewer than 10 differenced values per parameter.
        FitError: the optimiser hit ``max_iter`` or produced non-finite values.
    """
    w = difference(series, order.d, order.D, order.s)
    n_params = order.n_coefficients + int(order.has_mean)
    if w.size < 10 * (order.n_coefficients + 1):
        raise InsufficientHistoryError(
            f"SARIMA {order} needs {10 * (order.n_coefficients + 1)} differenced values, got {w.size}"
        )
    scale = float(np.var(w)) or 1.0
    ncond = order.p + order.s * order.P
    if w.size <= ncond:
        raise InsufficientHistoryError(f"SARIMA {order} needs more than {ncond} differenced values")

    def css(params: np.ndarray) -> float:
        phi, theta, Phi, Theta, mu = _unpack(params, order)
        e = _css_residuals(w - mu, ar_polynomial(phi, Phi, order.s), ma_polynomial(theta, Theta, order.s))
        return float(np.sum(e[ncond:] ** 2))

    def objective(params: np.ndarray) -> float:
        phi, theta, Phi, Theta, _ = _unpack(params, order)
        penalty = sum(
            _root_penalty(poly)
            for poly in (
                _seasonal(phi, 1, -1.0),
                _seasonal(theta, 1, 1.0),
                _seasonal(Phi, 1, -1.0),
                _seasonal(Theta, 1, 1.0),
            )
        )
        return css(params) / (w.size - ncond) + PENALTY_WEIGHT * scale * penalty

    start = np.zeros(n_params)
    if order.has_mean:
        start[-1] = float(w.mean())
    history = [objective(start)]

    if n_params:
        res = minimize(
            objective,
            start,
            method="BFGS",
            callback=lambda xk: history.append(objective(xk)),
            options={"maxiter": max_iter},
        )
        if res.status == 1:
            raise FitError(f"SARIMA {order} did not converge in {max_iter} iterations")
        if not res.success:
            logger.warning("SARIMA %s optimiser stopped early: %s", order, res.message)
        params = res.x
    else:
        params = start
    if not np.all(np.isfinite(params)):
        raise FitError(f"SARIMA {order} produced non-finite coefficients")

    phi, theta, Phi, Theta, mu = _unpack(params, order)
    resid_var = css(params) / (w.size - ncond)
    model = SarimaModel(
        order=order,
        phi=tuple(float(c) for c in phi),
        theta=tuple(float(c) for c in theta),
        Phi=tuple(float(c) for c in Phi),
        Theta=tuple(float(c) for c in Theta),
        intercept=mu,
        resid_var=float(resid_var),
        css_history=tuple(history),
    )
    logger.info(
        "Fitted SARIMA %s: phi=%s theta=%s Phi=%s Theta=%s mean=%.4g resid_var=%.4g",
        order, model.phi, model.theta, model.Phi, model.Theta, mu, resid_var,
    )
    return model


def forecast_one(model: SarimaModel, history: np.ndarray | Sequence[float]) -> float:
    """Conditional mean of the value after ``history`` on the original scale."""
    o = model.order
    hist = np.asarray(history, dtype=float)
    if hist.size < max(o.min_history, o.lost + 1):
        raise InsufficientHistoryError(
            f"SARIMA {o} forecasts need {max(o.min_history, o.lost + 1)} values, got {hist.size}"
        )
    w = difference(hist, o.d, o.D, o.s) - model.intercept
    ar, ma = model.ar_poly, model.ma_poly
    e = model.residuals(hist)
    # w_hat = -sum_{j>=1} ar_j w_{T+1-j} + sum_{k>=1} ma_k e_{T+1-k}
    w_rev, e_rev = w[::-1], e[::-1]
    ar_part = -float(ar[1:] @ w_rev[: ar.size - 1]) if ar.size > 1 else 0.0
    ma_len = min(ma.size - 1, e_rev.size)
    ma_part = float(ma[1 : 1 + ma_len] @ e_rev[:ma_len]) if ma_len else 0.0
    w_hat = model.intercept + ar_part + ma_part
    return float(integrate([w_hat], hist, o.d, o.D, o.s)[0])
