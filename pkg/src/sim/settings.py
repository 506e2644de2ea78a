"""Data-generating settings for the simulation lab.

Settings 1 and 2 draw a uniform covariate on [0, 10] and Gamma surrogates
(shape-scale parameterisation, so the mean is shape * scale); the outcome is
piecewise linear in the surrogate with pieces split on the covariate.
Setting 3 has no treatment effect at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from ..core import config
from ..core.heterogeneity import SurrogacyRegion
from ..store.trial_data import Study, StudyRole

TREATED_GAMMA = (2.55, 2.55)
CONTROL_GAMMA = (2.4, 2.4)


@dataclass(frozen=True)
class Piece:
    """Outcome means ``a + b * s`` per arm on one covariate piece."""

    lower: float
    upper: float
    treated: tuple[float, float]
    control: tuple[float, float]


@dataclass(frozen=True)
class PiecewiseSetting:
    w_range: tuple[float, float]
    pieces: tuple[Piece, ...]
    noise_sd: float


PIECEWISE_SETTINGS: dict[int, PiecewiseSetting] = {
    1: PiecewiseSetting(
        w_range=(0.0, 10.0),
        pieces=(
            Piece(0.0, 5.0, treated=(2.8, 0.0), control=(1.0, 0.0)),
            Piece(5.0, 10.0, treated=(0.0, 2.9), control=(0.0, 2.8)),
        ),
        noise_sd=1.0,
    ),
    2: PiecewiseSetting(
        w_range=(0.0, 10.0),
        pieces=(
            Piece(0.0, 2.5, treated=(2.8, 0.0), control=(1.0, 0.0)),
            Piece(2.5, 5.0, treated=(1.1, 0.4), control=(0.8, 0.3)),
            Piece(5.0, 7.5, treated=(1.5, 1.6), control=(1.0, 1.5)),
            Piece(7.5, 10.0, treated=(0.0, 1.85), control=(0.0, 1.8)),
        ),
        noise_sd=3.0,
    ),
}

NULL_W_RANGE = (0.0, 12.0)
NULL_S_MEAN, NULL_S_SD = 2.0, 3.0
NULL_NOISE_SD = 6.0


def _gamma_mean(params: tuple[float, float]) -> float:
    shape, scale = params
    return shape * scale


def _gamma_variance(params: tuple[float, float]) -> float:
    shape, scale = params
    return shape * scale * scale


class SettingSpec(BaseModel):
    """Experiment constants for one setting."""

    model_config = ConfigDict(frozen=True)

    id: Literal[1, 2, 3]
    n_a: tuple[int, int] = (1000, 1100)
    n_b: tuple[int, int] = (500, 400)
    iterations: int = Field(default=1000, ge=1)
    kappas: tuple[float, ...] = (0.5, 0.6, 0.7)
    seed: int = Field(default_factory=lambda: config.DEFAULT_SEED, ge=0)
    alpha: float = Field(default_factory=lambda: config.DEFAULT_ALPHA, gt=0, lt=1)
    grid_size: int = Field(default_factory=lambda: config.DEFAULT_GRID_SIZE, ge=2)
    gcv_iterations: int = Field(default_factory=lambda: config.DEFAULT_GCV_ITERATIONS, ge=1)
    holdout: float = Field(default_factory=lambda: config.DEFAULT_HOLDOUT, gt=0, lt=1)

    @field_validator("n_a", "n_b")
    @classmethod
    def _sizes(cls, value: tuple[int, int]) -> tuple[int, int]:
        if min(value) < 10:
            raise ValueError(f"per-arm sizes must be at least 10, got {value}")
        return value

    @field_validator("kappas")
    @classmethod
    def _kappas(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("at least one kappa is required")
        for kappa in value:
            if not (0.0 < kappa < 1.0):
                raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
        return value

    @property
    def w_range(self) -> tuple[float, float]:
        if self.id == 3:
            return NULL_W_RANGE
        return PIECEWISE_SETTINGS[self.id].w_range


def generate_study(spec: SettingSpec, n1: int, n0: int, rng: np.random.Generator) -> Study:
    """Draw a fully observed study: ``n1`` treated subjects followed by ``n0`` controls."""

    n = n1 + n0
    arm = np.concatenate([np.ones(n1, dtype=np.int8), np.zeros(n0, dtype=np.int8)])
    if spec.id == 3:
        w = rng.uniform(*NULL_W_RANGE, size=n)
        s = rng.normal(NULL_S_MEAN, NULL_S_SD, size=n)
        y = 2.0 * s + w + rng.normal(0.0, NULL_NOISE_SD, size=n)
        return Study(role=StudyRole.A, arm=arm, w=w, s=s, y=y)

    setting = PIECEWISE_SETTINGS[spec.id]
    w = rng.uniform(*setting.w_range, size=n)
    s = np.concatenate(
        [rng.gamma(*TREATED_GAMMA, size=n1), rng.gamma(*CONTROL_GAMMA, size=n0)]
    )
    noise = rng.normal(0.0, setting.noise_sd, size=n)

    breaks = np.array([piece.lower for piece in setting.pieces[1:]])
    piece_index = np.searchsorted(breaks, w, side="right")
    intercept = np.empty(n)
    slope = np.empty(n)
    for k, piece in enumerate(setting.pieces):
        on_piece = piece_index == k
        a1, b1 = piece.treated
        a0, b0 = piece.control
        intercept[on_piece] = np.where(arm[on_piece] == 1, a1, a0)
        slope[on_piece] = np.where(arm[on_piece] == 1, b1, b0)
    y = intercept + slope * s + noise
    return Study(role=StudyRole.A, arm=arm, w=w, s=s, y=y)


def true_delta_b(setting_id: int) -> float:
    """Population treatment effect on the outcome."""

    if setting_id == 3:
        return 0.0
    setting = PIECEWISE_SETTINGS[setting_id]
    lo, hi = setting.w_range
    mean_treated = _gamma_mean(TREATED_GAMMA)
    mean_control = _gamma_mean(CONTROL_GAMMA)
    total = 0.0
    for piece in setting.pieces:
        a1, b1 = piece.treated
        a0, b0 = piece.control
        effect = (a1 + b1 * mean_treated) - (a0 + b0 * mean_control)
        total += (piece.upper - piece.lower) / (hi - lo) * effect
    return total


def true_pte(setting_id: int, ws: np.ndarray) -> np.ndarray:
    """Population surrogate strength at each covariate value (``NaN`` under the null)."""

    points = np.asarray(ws, dtype=float)
    if setting_id == 3:
        return np.full(points.shape, math.nan)
    setting = PIECEWISE_SETTINGS[setting_id]
    mean_treated = _gamma_mean(TREATED_GAMMA)
    mean_control = _gamma_mean(CONTROL_GAMMA)
    values = []
    for piece in setting.pieces:
        a1, b1 = piece.treated
        a0, b0 = piece.control
        total_effect = (a1 + b1 * mean_treated) - (a0 + b0 * mean_control)
        residual_effect = (a1 + b1 * mean_control) - (a0 + b0 * mean_control)
        values.append(1.0 - residual_effect / total_effect)
    breaks = np.array([piece.lower for piece in setting.pieces[1:]])
    return np.asarray(values)[np.searchsorted(breaks, points, side="right")]


def true_pi_b(spec: SettingSpec, region: SurrogacyRegion) -> float:
    """Share of the uniform covariate distribution that falls in ``region``."""
    lo, hi = spec.w_range
    return region.measure(lo, hi) / (hi - lo)


def true_delta_p(spec: SettingSpec, region: SurrogacyRegion) -> float:
    """Population target of the pooled estimator for a fixed region.

    Outside the region subjects contribute their outcome effect; inside, only
    the shift of the surrogate distribution carried through the control
    regression ``a0 + b0 * s``.
    """

    if spec.id == 3:
        return 0.0
    setting = PIECEWISE_SETTINGS[spec.id]
    lo, hi = setting.w_range
    mean_treated = _gamma_mean(TREATED_GAMMA)
    mean_control = _gamma_mean(CONTROL_GAMMA)
    total = 0.0
    for piece in setting.pieces:
        a1, b1 = piece.treated
        a0, b0 = piece.control
        inside = region.measure(piece.lower, piece.upper)
        outside = piece.upper - piece.lower - inside
        total += outside * ((a1 + b1 * mean_treated) - (a0 + b0 * mean_control))
        total += inside * b0 * (mean_treated - mean_control)
    return total / (hi - lo)


def _pooled_arm_variance(
    setting: PiecewiseSetting, region: SurrogacyRegion, arm: int
) -> float:
    gamma = TREATED_GAMMA if arm == 1 else CONTROL_GAMMA
    mean_s, var_s = _gamma_mean(gamma), _gamma_variance(gamma)
    lo, hi = setting.w_range
    first = second = 0.0
    for piece in setting.pieces:
        a, b = piece.treated if arm == 1 else piece.control
        a0, b0 = piece.control
        inside = region.measure(piece.lower, piece.upper) / (hi - lo)
        outside = (piece.upper - piece.lower) / (hi - lo) - inside
        observed = a + b * mean_s
        imputed = a0 + b0 * mean_s
        first += outside * observed + inside * imputed
        second += outside * (observed**2 + b * b * var_s + setting.noise_sd**2)
        second += inside * (imputed**2 + b0 * b0 * var_s)
    return second - first * first


def pooled_power(spec: SettingSpec, region: SurrogacyRegion) -> float:
    """Two-sided rejection probability of the pooled test at the Study B sizes.

    Treats the control regression as known, so the variance leaves out the
    Study A fitting error.
    """

    if spec.id == 3:
        return spec.alpha
    setting = PIECEWISE_SETTINGS[spec.id]
    n1, n0 = spec.n_b
    se = math.sqrt(
        _pooled_arm_variance(setting, region, 1) / n1
        + _pooled_arm_variance(setting, region, 0) / n0
    )
    shift = true_delta_p(spec, region) / se
    critical = float(stats.norm.ppf(1.0 - spec.alpha / 2.0))
    return float(stats.norm.sf(critical - shift) + stats.norm.cdf(-critical - shift))


__all__ = [
    "PIECEWISE_SETTINGS",
    "Piece",
    "PiecewiseSetting",
    "SettingSpec",
    "generate_study",
    "pooled_power",
    "true_delta_b",
    "true_delta_p",
    "true_pi_b",
    "true_pte",
]
