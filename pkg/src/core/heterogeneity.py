"""Covariate-dependent surrogate strength and the strong-surrogacy region.

``estimate_pte`` computes the two-stage kernel estimate of the proportion of
treatment effect explained by the surrogate at each point of a covariate grid:

* ``m_g(u)``: mean outcome given covariate ``u`` in arm ``g``;
* ``mu_1(s, u)``: mean treated outcome given surrogate ``s`` and covariate ``u``;
* ``m_10(u)``: ``mu_1`` integrated over the control surrogate distribution at ``u``.

``R_S(u) = 1 - (m_10 - m_0) / (m_1 - m_0)``. ``build_region`` thresholds the
curve into a union of closed covariate intervals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from . import config
from .errors import EstimationError
from .smoothing import (
    FallbackTally,
    KernelConfig,
    as_finite_vector,
    bandwidth_etsi,
    bandwidth_rule_of_thumb,
    conditional_cdf_weight_matrix,
    fit_conditional_mean,
    kernel,
    predict_many,
    underflow_threshold,
)
from ..store.trial_data import Study, StudyRole

LOGGER = logging.getLogger(__name__)

MIN_ARM_SIZE = 10
_DELTA_RELATIVE_EPS = 1e-6
_GRID_BLOCK = 16


@dataclass(frozen=True)
class SurrogacyRegion:
    """Union of disjoint closed covariate intervals where the surrogate is strong."""

    kappa: float
    intervals: tuple[tuple[float, float], ...]
    grid_range: tuple[float, float]

    def __post_init__(self) -> None:
        intervals = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        low, high = (float(bound) for bound in self.grid_range)
        if not (math.isfinite(low) and math.isfinite(high)) or low > high:
            raise ValueError(f"invalid grid range {self.grid_range}")
        previous = -math.inf
        for lo, hi in intervals:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid interval [{lo}, {hi}]")
            if lo <= previous:
                raise ValueError("intervals must be disjoint and ascending")
            if lo < low or hi > high:
                raise ValueError(f"interval [{lo}, {hi}] leaves the grid range [{low}, {high}]")
            previous = hi
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "grid_range", (low, high))

    @classmethod
    def full(cls, lower: float, upper: float, kappa: float = math.nan) -> "SurrogacyRegion":
        return cls(kappa=kappa, intervals=((lower, upper),), grid_range=(lower, upper))

    @classmethod
    def empty(cls, lower: float, upper: float, kappa: float = math.nan) -> "SurrogacyRegion":
        return cls(kappa=kappa, intervals=(), grid_range=(lower, upper))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, ws: Sequence[float] | np.ndarray) -> np.ndarray:
        points = as_finite_vector(ws, "covariate values")
        inside = np.zeros(points.size, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (points >= lo) & (points <= hi)
        return inside

    def fraction(self, ws: Sequence[float] | np.ndarray) -> float:
        """Share of ``ws`` that falls inside the region."""
        inside = self.contains(ws)
        return float(inside.mean()) if inside.size else 0.0

    def measure(self, lower: float, upper: float) -> float:
        """Length of the region intersected with ``[lower, upper]``."""
        return float(
            sum(max(0.0, min(hi, upper) - max(lo, lower)) for lo, hi in self.intervals)
        )


def membership(region: SurrogacyRegion, w: float) -> bool:
    if not math.isfinite(w):
        raise ValueError(f"covariate value must be finite, got {w}")
    return bool(region.contains([w])[0])


@dataclass(frozen=True)
class PteCurve:
    """Gridded surrogate-strength estimate.

    ``r_s`` is ``NaN`` where ``defined`` is false. The smoother intermediates
    are only present on freshly estimated curves; curves read back from CSV
    carry the gridded estimates alone.
    """

    grid: np.ndarray
    delta_k: np.ndarray
    delta_s_k: np.ndarray
    r_s: np.ndarray
    defined: np.ndarray
    bandwidth_w: float = math.nan
    bandwidth_s: float = math.nan
    m1: np.ndarray | None = field(default=None, repr=False)
    m0: np.ndarray | None = field(default=None, repr=False)
    m10: np.ndarray | None = field(default=None, repr=False)
    cdf_weights: np.ndarray | None = field(default=None, repr=False)
    mu1_at_s0: np.ndarray | None = field(default=None, repr=False)
    clamp_count: int = 0
    fallback_count: int = 0

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        sizes = {
            grid.size,
            np.asarray(self.delta_k).size,
            np.asarray(self.delta_s_k).size,
            np.asarray(self.r_s).size,
            np.asarray(self.defined).size,
        }
        if len(sizes) != 1:
            raise ValueError("curve arrays must have equal length")
        if grid.size >= 2 and not np.all(np.diff(grid) > 0):
            raise ValueError("curve grid must be strictly ascending")

    @property
    def grid_range(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])


def _product_kernel_means(
    s_treated: np.ndarray,
    w_treated: np.ndarray,
    y_treated: np.ndarray,
    s_queries: np.ndarray,
    grid: np.ndarray,
    cfg_s: KernelConfig,
    cfg_w: KernelConfig,
    tally: FallbackTally,
    threads: int,
) -> np.ndarray:
    """Treated-arm product-kernel mean at every (grid point, control surrogate) pair."""

    s_clamped = np.clip(s_queries, s_treated.min(), s_treated.max())
    u_clamped = np.clip(grid, w_treated.min(), w_treated.max())
    n_s_clamped = int(np.count_nonzero(s_clamped != s_queries))
    n_u_clamped = int(np.count_nonzero(u_clamped != grid))
    tally.record(
        clamped=grid.size * s_queries.size
        - (grid.size - n_u_clamped) * (s_queries.size - n_s_clamped)
    )

    k_s = kernel((s_clamped[:, None] - s_treated[None, :]) / cfg_s.h)
    threshold = underflow_threshold(s_treated.size, dims=2)

    def evaluate_block(rows: slice) -> tuple[np.ndarray, int]:
        u_block = u_clamped[rows]
        k_w = kernel((u_block[:, None] - w_treated[None, :]) / cfg_w.h)
        denominator = k_w @ k_s.T
        numerator = (k_w * y_treated) @ k_s.T
        under = denominator < threshold
        values = np.divide(
            numerator, denominator, out=np.zeros_like(numerator), where=~under
        )
        for r, i in zip(*np.nonzero(under)):
            distance = ((s_treated - s_clamped[i]) / cfg_s.h) ** 2 + (
                (w_treated - u_block[r]) / cfg_w.h
            ) ** 2
            values[r, i] = y_treated[int(np.argmin(distance))]
        return values, int(under.sum())

    blocks = [
        slice(start, min(start + _GRID_BLOCK, grid.size))
        for start in range(0, grid.size, _GRID_BLOCK)
    ]
    results = Parallel(n_jobs=threads, backend="threading")(
        delayed(evaluate_block)(rows) for rows in blocks
    )
    tally.record(fallbacks=sum(count for _, count in results))
    return np.vstack([values for values, _ in results])


def estimate_pte(
    study_a: Study,
    grid_size: int | None = None,
    bandwidth_override: float | None = None,
    *,
    surrogate_bandwidth_override: float | None = None,
    threads: int | None = None,
) -> PteCurve:
    """Estimate the surrogate-strength curve over Study A's covariate range.

    All covariate-direction smoothers share one bandwidth: the override, or the
    plain rule-of-thumb over pooled covariates. The curve is a ratio of two
    local contrasts, so it is not undersmoothed; pass
    ``bandwidth_override=bandwidth_etsi(study_a.w, study_a.n0)`` for the
    undersmoothed covariate bandwidth. The surrogate direction of the
    treated-arm product kernel uses the undersmoothed rule over treated
    surrogate values with ``n_ref = n0``.
    """

    if study_a.role is not StudyRole.A:
        raise ValueError("PTE estimation needs a fully observed Study A")
    for g in (1, 0):
        count = int(np.count_nonzero(study_a.arm == g))
        if count < MIN_ARM_SIZE:
            raise EstimationError(
                f"arm {g} has {count} subjects; PTE estimation needs at least {MIN_ARM_SIZE}"
            )
    size = grid_size if grid_size is not None else config.DEFAULT_GRID_SIZE
    if size < 2:
        raise ValueError(f"grid_size must be at least 2, got {size}")
    workers = threads if threads is not None else config.DEFAULT_THREADS

    treated = study_a.arm == 1
    control = ~treated
    n_ref = study_a.n0
    h_w = (
        bandwidth_override
        if bandwidth_override is not None
        else bandwidth_rule_of_thumb(study_a.w)
    )
    h_s = (
        surrogate_bandwidth_override
        if surrogate_bandwidth_override is not None
        else bandwidth_etsi(study_a.s[treated], n_ref)
    )
    cfg_w = KernelConfig(h=h_w)
    cfg_s = KernelConfig(h=h_s)

    grid = np.linspace(float(study_a.w.min()), float(study_a.w.max()), size)
    fit_treated = fit_conditional_mean(study_a.w[treated], study_a.y[treated], cfg_w)
    fit_control = fit_conditional_mean(study_a.w[control], study_a.y[control], cfg_w)
    m1 = predict_many(fit_treated, grid)
    m0 = predict_many(fit_control, grid)

    tally = FallbackTally()
    cdf_weights = conditional_cdf_weight_matrix(study_a.w[control], grid, cfg_w, tally)
    mu1_at_s0 = _product_kernel_means(
        study_a.s[treated],
        study_a.w[treated],
        study_a.y[treated],
        study_a.s[control],
        grid,
        cfg_s,
        cfg_w,
        tally,
        workers,
    )
    m10 = (cdf_weights * mu1_at_s0).sum(axis=1)

    delta_k = m1 - m0
    delta_s_k = m10 - m0
    eps = _DELTA_RELATIVE_EPS * float(np.abs(study_a.y).max())
    defined = (np.abs(delta_k) >= eps) & (delta_k != 0)
    r_s = np.full(size, np.nan)
    r_s[defined] = 1.0 - delta_s_k[defined] / delta_k[defined]

    clamp_count = fit_treated.clamp_count + fit_control.clamp_count + tally.clamp_count
    fallback_count = (
        fit_treated.fallback_count + fit_control.fallback_count + tally.fallback_count
    )
    if clamp_count or fallback_count:
        LOGGER.warning(
            "Out-of-support smoothing during PTE estimation",
            extra={"clamped": clamp_count, "fallbacks": fallback_count},
        )
    undefined = int(size - np.count_nonzero(defined))
    if undefined:
        LOGGER.warning(
            "PTE undefined where the treatment effect vanishes",
            extra={"undefined_points": undefined, "grid_size": size},
        )
    LOGGER.info("Estimated PTE curve", extra={"grid_size": size, "h_w": h_w, "h_s": h_s})

    return PteCurve(
        grid=grid,
        delta_k=delta_k,
        delta_s_k=delta_s_k,
        r_s=r_s,
        defined=defined,
        bandwidth_w=h_w,
        bandwidth_s=h_s,
        m1=m1,
        m0=m0,
        m10=m10,
        cdf_weights=cdf_weights,
        mu1_at_s0=mu1_at_s0,
        clamp_count=clamp_count,
        fallback_count=fallback_count,
    )


def _runs(flags: np.ndarray) -> Iterable[tuple[int, int]]:
    """Yield inclusive (start, stop) index pairs of consecutive true entries."""
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return zip(starts.tolist(), stops.tolist())


def build_region(curve: PteCurve, kappa: float) -> SurrogacyRegion:
    """Threshold the curve at ``kappa``; boundaries sit midway between grid points."""

    if not (0.0 < kappa < 1.0):
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    defined = np.asarray(curve.defined, dtype=bool)
    if int(np.count_nonzero(defined)) < 2:
        raise EstimationError("curve has fewer than two defined grid points")

    grid = np.asarray(curve.grid, dtype=float)
    r_s = np.asarray(curve.r_s, dtype=float)
    above = np.zeros(grid.size, dtype=bool)
    above[defined] = r_s[defined] > kappa

    last = grid.size - 1
    intervals = []
    for start, stop in _runs(above):
        lower = grid[0] if start == 0 else 0.5 * (grid[start - 1] + grid[start])
        upper = grid[last] if stop == last else 0.5 * (grid[stop] + grid[stop + 1])
        intervals.append((float(lower), float(upper)))

    return SurrogacyRegion(kappa=kappa, intervals=tuple(intervals), grid_range=curve.grid_range)


__all__ = [
    "MIN_ARM_SIZE",
    "PteCurve",
    "SurrogacyRegion",
    "build_region",
    "estimate_pte",
    "membership",
]
