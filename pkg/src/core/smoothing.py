"""Gaussian kernel smoothing primitives.

Bandwidth rules, Nadaraya-Watson conditional means and kernel-weighted
conditional CDF weights. Out-of-support queries are clamped to the training
range and denominators that underflow fall back to the nearest training point;
both events are tallied on the fit so callers can report them.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from .errors import DegenerateBandwidthError

LOGGER = logging.getLogger(__name__)

_ROT_FACTOR = 1.06
_IQR_SCALE = 1.34
_UNDERFLOW_RATIO = 1e-12
_PHI_ZERO = float(stats.norm.pdf(0.0))
_BLOCK_ROWS = 1024


class KernelConfig(BaseModel):
    """Kernel family and bandwidth for one smoother."""

    model_config = ConfigDict(frozen=True)

    kernel: Literal["gaussian"] = "gaussian"
    h: float = Field(gt=0)

    @field_validator("h")
    @classmethod
    def _finite_bandwidth(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("bandwidth must be finite")
        return value


def kernel(u: np.ndarray) -> np.ndarray:
    """Standard normal density evaluated elementwise."""
    return stats.norm.pdf(u)


def underflow_threshold(n_points: int, dims: int = 1) -> float:
    """Smallest acceptable unscaled kernel mass for ``n_points`` training points."""
    return _UNDERFLOW_RATIO * (_PHI_ZERO**dims) * n_points


def as_finite_vector(values: Sequence[float] | np.ndarray, name: str = "values") -> np.ndarray:
    array = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite")
    return array


class FallbackTally:
    """Thread-safe counters for clamped and nearest-neighbour evaluations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._clamped = 0
        self._fallbacks = 0

    def record(self, *, clamped: int = 0, fallbacks: int = 0) -> None:
        if not clamped and not fallbacks:
            return
        with self._lock:
            self._clamped += clamped
            self._fallbacks += fallbacks

    @property
    def clamp_count(self) -> int:
        with self._lock:
            return self._clamped

    @property
    def fallback_count(self) -> int:
        with self._lock:
            return self._fallbacks


def bandwidth_rule_of_thumb(values: Sequence[float] | np.ndarray) -> float:
    """Return ``1.06 * min(sd, IQR / 1.34) * m ** -0.2``.

    Quartiles use linear interpolation between order statistics. When the
    interquartile range collapses but the sample still has spread (heavy ties),
    the standard deviation alone is used.
    """

    array = as_finite_vector(values)
    if array.size < 2:
        raise ValueError("bandwidth rule needs at least two values")
    if np.ptp(array) == 0:
        raise DegenerateBandwidthError(
            f"cannot choose a bandwidth: all {array.size} values equal {array[0]:g}"
        )

    sd = float(np.std(array, ddof=1))
    iqr = float(stats.iqr(array, interpolation="linear"))
    spread = min(sd, iqr / _IQR_SCALE)
    if spread <= 0:
        spread = sd
    return _ROT_FACTOR * spread * array.size ** (-0.2)


def bandwidth_etsi(values: Sequence[float] | np.ndarray, n_ref: int) -> float:
    """Rule-of-thumb bandwidth undersmoothed by ``n_ref ** -0.2``."""
    if n_ref < 1:
        raise ValueError(f"n_ref must be at least 1, got {n_ref}")
    return bandwidth_rule_of_thumb(values) * float(n_ref) ** (-0.2)


@dataclass(frozen=True)
class ConditionalMeanFit:
    """Nadaraya-Watson regression of ``ys`` on ``xs``."""

    xs: np.ndarray
    ys: np.ndarray
    config: KernelConfig
    support: tuple[float, float]
    tally: FallbackTally = field(default_factory=FallbackTally, compare=False, repr=False)

    @property
    def h(self) -> float:
        return self.config.h

    @property
    def clamp_count(self) -> int:
        return self.tally.clamp_count

    @property
    def fallback_count(self) -> int:
        return self.tally.fallback_count


def fit_conditional_mean(
    xs: Sequence[float] | np.ndarray,
    ys: Sequence[float] | np.ndarray,
    config: KernelConfig,
) -> ConditionalMeanFit:
    x_array = as_finite_vector(xs, "xs").copy()
    y_array = as_finite_vector(ys, "ys").copy()
    if x_array.size == 0:
        raise ValueError("cannot fit a conditional mean to empty data")
    if x_array.size != y_array.size:
        raise ValueError(f"length mismatch: {x_array.size} abscissae, {y_array.size} responses")
    x_array.setflags(write=False)
    y_array.setflags(write=False)
    return ConditionalMeanFit(
        xs=x_array,
        ys=y_array,
        config=config,
        support=(float(x_array.min()), float(x_array.max())),
    )


def predict_many(fit: ConditionalMeanFit, points: Sequence[float] | np.ndarray) -> np.ndarray:
    """Vectorised :func:`predict`; tallies are incremented once per point."""

    query = as_finite_vector(points, "query points")
    lower, upper = fit.support
    clamped = np.clip(query, lower, upper)
    n_clamped = int(np.count_nonzero(clamped != query))

    threshold = underflow_threshold(fit.xs.size)
    values = np.empty(query.size, dtype=float)
    fallbacks = 0
    for start in range(0, query.size, _BLOCK_ROWS):
        block = clamped[start : start + _BLOCK_ROWS]
        weights = kernel((block[:, None] - fit.xs[None, :]) / fit.config.h)
        denominator = weights.sum(axis=1)
        numerator = weights @ fit.ys
        under = denominator < threshold
        estimate = np.divide(
            numerator, denominator, out=np.zeros_like(numerator), where=~under
        )
        if under.any():
            nearest = np.abs(block[under, None] - fit.xs[None, :]).argmin(axis=1)
            estimate[under] = fit.ys[nearest]
            fallbacks += int(under.sum())
        values[start : start + block.size] = estimate

    fit.tally.record(clamped=n_clamped, fallbacks=fallbacks)
    # convex combination; clip absorbs rounding past the response range
    return np.clip(values, fit.ys.min(), fit.ys.max())


def predict(fit: ConditionalMeanFit, s: float) -> float:
    if not math.isfinite(s):
        raise ValueError(f"query point must be finite, got {s}")
    return float(predict_many(fit, [s])[0])


def conditional_cdf_weight_matrix(
    ws: Sequence[float] | np.ndarray,
    us: Sequence[float] | np.ndarray,
    config: KernelConfig,
    tally: FallbackTally | None = None,
) -> np.ndarray:
    """Row ``k`` holds the normalised kernel weights of ``ws`` around ``us[k]``."""

    points = as_finite_vector(ws, "ws")
    centres = as_finite_vector(us, "u")
    if points.size == 0:
        raise ValueError("conditional CDF weights need at least one point")

    raw = kernel((centres[:, None] - points[None, :]) / config.h)
    denominator = raw.sum(axis=1)
    under = denominator < underflow_threshold(points.size)
    weights = np.divide(
        raw, denominator[:, None], out=np.zeros_like(raw), where=~under[:, None]
    )
    if under.any():
        rows = np.flatnonzero(under)
        nearest = np.abs(centres[rows, None] - points[None, :]).argmin(axis=1)
        weights[rows, nearest] = 1.0
        if tally is not None:
            tally.record(fallbacks=int(rows.size))
    return weights


def conditional_cdf_weights(
    ws: Sequence[float] | np.ndarray,
    u: float,
    config: KernelConfig,
    tally: FallbackTally | None = None,
) -> np.ndarray:
    if not math.isfinite(u):
        raise ValueError(f"centre must be finite, got {u}")
    return conditional_cdf_weight_matrix(ws, [u], config, tally)[0]


__all__ = [
    "ConditionalMeanFit",
    "FallbackTally",
    "KernelConfig",
    "as_finite_vector",
    "bandwidth_etsi",
    "bandwidth_rule_of_thumb",
    "conditional_cdf_weight_matrix",
    "conditional_cdf_weights",
    "fit_conditional_mean",
    "kernel",
    "predict",
    "predict_many",
    "underflow_threshold",
]
