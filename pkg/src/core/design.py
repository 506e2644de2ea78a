"""Design a future Study B from Study A alone.

Repeated half-sample splits of Study A stand in for "prior study" and
"future study": the fit half supplies the in-region control regression, the
evaluation half is masked and analysed with the pooled estimator. The averaged
contrasts and stratum variances then drive the expected-power and sample-size
formulas for a two-sided test at the 5% level.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from . import config
from .errors import DesignUndefinedError, NoSolutionError, NumericalError
from .heterogeneity import PteCurve, SurrogacyRegion, build_region
from .pooled_test import delta_p_hat, fit_nu_a0, impute
from .rng import GCV_DOMAIN, keyed_rng
from ..store.trial_data import Study, StudyRole, mask_study_b

LOGGER = logging.getLogger(__name__)

Z_CRIT = 1.96
_DELTA_RELATIVE_EPS = 1e-6
_REDRAW_FACTOR = 10


@dataclass(frozen=True)
class DesignEstimates:
    """Cross-validated design quantities.

    ``tau`` is the outside-region outcome contrast and ``rho`` the in-region
    imputed contrast, each relative to the outcome effect ``delta_a`` over all
    evaluation subjects; the power numerator weights them by ``1 - pi_B`` and
    ``pi_B`` respectively.
    """

    tau: float
    rho: float
    s1_sq: float
    s2_sq: float
    s3_sq: float
    s4_sq: float
    ybar_1c: float
    ybar_1w: float
    ybar_0c: float
    ybar_0w: float
    delta_c: float
    delta_w: float
    delta_a: float
    pi_a: float
    iterations: int
    holdout: float
    seed: int
    redraws: int = 0


class PowerQuery(BaseModel):
    """Planned Study B: per-arm sizes, alternative effect and surrogate-only share.

    ``psi = 0`` is accepted and evaluates the one-sided size of the test.
    """

    model_config = ConfigDict(frozen=True)

    n_b1: float = Field(ge=1)
    n_b0: float = Field(ge=1)
    psi: float = Field(ge=0)
    pi_b: float = Field(ge=0, le=1)

    @field_validator("n_b1", "n_b0", "psi", "pi_b")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("design inputs must be finite")
        return value


@dataclass(frozen=True)
class SampleSize:
    n_per_arm: float
    n_per_arm_ceil: int


@dataclass(frozen=True)
class PowerGridRow:
    kappa: float
    psi: float
    n_total: int
    power: float


@dataclass(frozen=True)
class _SplitSummary:
    delta_c: float
    delta_w: float
    delta_a: float
    pi: float
    s1_sq: float
    s2_sq: float
    s3_sq: float
    s4_sq: float
    ybar_1c: float
    ybar_1w: float
    ybar_0c: float
    ybar_0w: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.delta_c,
                self.delta_w,
                self.delta_a,
                self.pi,
                self.s1_sq,
                self.s2_sq,
                self.s3_sq,
                self.s4_sq,
                self.ybar_1c,
                self.ybar_1w,
                self.ybar_0c,
                self.ybar_0w,
            ]
        )


class _RedrawBudget:
    """Split redraws left across all iterations; shared by worker threads."""

    def __init__(self, cap: int) -> None:
        self._lock = threading.Lock()
        self._remaining = cap

    def take(self) -> bool:
        with self._lock:
            if self._remaining <= 0:
                return False
            self._remaining -= 1
            return True


def _zero_if_nan(value: float) -> float:
    return 0.0 if math.isnan(value) else value


def _evaluate_split(fit_half: Study, eval_half: Study, region: SurrogacyRegion) -> _SplitSummary:
    masked = mask_study_b(eval_half, region)
    assert masked.delta is not None
    if masked.delta.any():
        fit = fit_nu_a0(fit_half, region)
        imputations = impute(fit, masked)
    else:
        imputations = np.empty(0, dtype=float)
    _, components = delta_p_hat(masked, imputations)
    arm1, arm0 = components.arm1, components.arm0

    delta_c = arm1.ybar_c - arm0.ybar_c if arm1.n_c and arm0.n_c else 0.0
    delta_w = arm1.ybar_w - arm0.ybar_w if arm1.n_w and arm0.n_w else 0.0
    # outcome effect over every evaluation subject, not the pooled contrast
    treated = eval_half.arm == 1
    delta_a = float(eval_half.y[treated].mean() - eval_half.y[~treated].mean())
    pi = float(masked.delta.mean())
    return _SplitSummary(
        delta_c=delta_c,
        delta_w=delta_w,
        delta_a=delta_a,
        pi=pi,
        s1_sq=_zero_if_nan(arm1.var_c),
        s2_sq=_zero_if_nan(arm1.var_w),
        s3_sq=_zero_if_nan(arm0.var_c),
        s4_sq=_zero_if_nan(arm0.var_w),
        ybar_1c=_zero_if_nan(arm1.ybar_c),
        ybar_1w=_zero_if_nan(arm1.ybar_w),
        ybar_0c=_zero_if_nan(arm0.ybar_c),
        ybar_0w=_zero_if_nan(arm0.ybar_w),
    )


def _required_strata(study_a: Study, in_region: np.ndarray) -> list[tuple[int, bool]]:
    """(arm, inside) strata populated in the full Study A."""
    required = []
    for g in (1, 0):
        members = study_a.arm == g
        for inside in (False, True):
            if np.any(members & (in_region == inside)):
                required.append((g, inside))
    return required


def _usable(
    fit_half: Study,
    eval_half: Study,
    region: SurrogacyRegion,
    required: list[tuple[int, bool]],
) -> bool:
    eval_inside = region.contains(eval_half.w)
    for g, inside in required:
        if np.count_nonzero((eval_half.arm == g) & (eval_inside == inside)) < 2:
            return False
    if eval_inside.any():
        fit_controls = (fit_half.arm == 0) & region.contains(fit_half.w)
        if np.count_nonzero(fit_controls) < 2:
            return False
    return True


def _split(
    study_a: Study, holdout: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    fit_parts, eval_parts = [], []
    for g in (1, 0):
        members = rng.permutation(study_a.arm_indices(g))
        n_eval = int(round(holdout * members.size))
        eval_parts.append(members[:n_eval])
        fit_parts.append(members[n_eval:])
    return np.sort(np.concatenate(fit_parts)), np.sort(np.concatenate(eval_parts))


def gcv_design(
    study_a: Study,
    region: SurrogacyRegion,
    iterations: int | None = None,
    holdout: float | None = None,
    seed: int | None = None,
    *,
    threads: int | None = None,
    resample: bool = True,
) -> DesignEstimates:
    """Average split-sample contrasts and variances over ``iterations`` random splits.

    Splits are drawn per arm. A split that leaves a stratum populated in the
    full Study A with fewer than two evaluation subjects is redrawn, and all
    iterations draw on one budget of ``10 * iterations`` redraws. Each
    iteration has its own keyed stream per attempt, so results do not depend
    on the worker count. ``resample=False`` uses the whole study as both halves.
    """

    if study_a.role is not StudyRole.A:
        raise ValueError("design needs a fully observed Study A")
    n_iterations = iterations if iterations is not None else config.DEFAULT_GCV_ITERATIONS
    rate = holdout if holdout is not None else config.DEFAULT_HOLDOUT
    master_seed = seed if seed is not None else config.DEFAULT_SEED
    workers = threads if threads is not None else config.DEFAULT_THREADS
    if n_iterations < 1:
        raise ValueError(f"iterations must be at least 1, got {n_iterations}")
    if not (0.0 < rate < 1.0):
        raise ValueError(f"holdout must lie in (0, 1), got {rate}")

    in_region = region.contains(study_a.w)
    required = _required_strata(study_a, in_region)
    cap = _REDRAW_FACTOR * n_iterations

    if resample:
        for g in (1, 0):
            n_g = study_a.arm_indices(g).size
            n_eval = int(round(rate * n_g))
            if n_eval < 2 or n_g - n_eval < 2:
                raise ValueError(
                    f"holdout {rate} leaves fewer than 2 subjects in a half of arm {g}"
                )
    elif not _usable(study_a, study_a, region, required):
        raise DesignUndefinedError("Study A has a stratum with fewer than 2 subjects")

    budget = _RedrawBudget(cap)

    def run(iteration: int) -> tuple[_SplitSummary, int]:
        if not resample:
            return _evaluate_split(study_a, study_a, region), 0
        attempt = 0
        while True:
            rng = keyed_rng(master_seed, GCV_DOMAIN, iteration, attempt)
            fit_index, eval_index = _split(study_a, rate, rng)
            fit_half = study_a.subset(fit_index)
            eval_half = study_a.subset(eval_index)
            if _usable(fit_half, eval_half, region, required):
                return _evaluate_split(fit_half, eval_half, region), attempt
            if not budget.take():
                raise DesignUndefinedError(
                    f"iteration {iteration}: split redraws exceed the cap of {cap}"
                )
            attempt += 1

    outcomes = Parallel(n_jobs=workers, backend="threading")(
        delayed(run)(iteration) for iteration in range(n_iterations)
    )
    redraws = sum(attempts for _, attempts in outcomes)
    if redraws:
        LOGGER.warning("Redrew cross-validation splits", extra={"redraws": redraws})

    averaged = np.mean(np.vstack([summary.as_array() for summary, _ in outcomes]), axis=0)
    summary = _SplitSummary(*(float(value) for value in averaged))

    eps = _DELTA_RELATIVE_EPS * float(np.abs(study_a.y).max())
    if abs(summary.delta_a) < eps or summary.delta_a == 0:
        raise DesignUndefinedError(
            f"averaged treatment effect {summary.delta_a:.3g} is numerically zero"
        )

    estimates = DesignEstimates(
        tau=summary.delta_c / summary.delta_a,
        rho=summary.delta_w / summary.delta_a,
        s1_sq=summary.s1_sq,
        s2_sq=summary.s2_sq,
        s3_sq=summary.s3_sq,
        s4_sq=summary.s4_sq,
        ybar_1c=summary.ybar_1c,
        ybar_1w=summary.ybar_1w,
        ybar_0c=summary.ybar_0c,
        ybar_0w=summary.ybar_0w,
        delta_c=summary.delta_c,
        delta_w=summary.delta_w,
        delta_a=summary.delta_a,
        pi_a=summary.pi,
        iterations=n_iterations,
        holdout=rate,
        seed=master_seed,
        redraws=redraws,
    )
    LOGGER.info(
        "Cross-validated design",
        extra={"tau": estimates.tau, "rho": estimates.rho, "iterations": n_iterations},
    )
    return estimates


def _arm_design_variance(
    var_c: float, var_w: float, ybar_c: float, ybar_w: float, pi_b: float
) -> float:
    total = 0.0
    if pi_b < 1:
        total += (1.0 - pi_b) * var_c
    if pi_b > 0:
        total += pi_b * var_w
    if 0 < pi_b < 1:
        total += pi_b * (1.0 - pi_b) * (ybar_c - ybar_w) ** 2
    return total


def _arm_variances(est: DesignEstimates, pi_b: float) -> tuple[float, float]:
    arm1 = _arm_design_variance(est.s1_sq, est.s2_sq, est.ybar_1c, est.ybar_1w, pi_b)
    arm0 = _arm_design_variance(est.s3_sq, est.s4_sq, est.ybar_0c, est.ybar_0w, pi_b)
    return arm1, arm0


def _effect(est: DesignEstimates, psi: float, pi_b: float) -> float:
    return ((1.0 - pi_b) * est.tau + pi_b * est.rho) * psi


def expected_power(est: DesignEstimates, q: PowerQuery) -> float:
    """Probability of rejecting at the planned sizes when the true effect is ``q.psi``."""

    arm1, arm0 = _arm_variances(est, q.pi_b)
    scaled = arm1 / q.n_b1 + arm0 / q.n_b0
    if not scaled > 0:
        raise DesignUndefinedError("design variance is zero")
    power = float(stats.norm.sf(Z_CRIT - _effect(est, q.psi, q.pi_b) / math.sqrt(scaled)))
    return float(np.clip(power, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)))


def required_n(est: DesignEstimates, psi: float, pi_b: float, beta: float) -> SampleSize:
    """Equal per-arm size reaching power ``1 - beta`` at alternative ``psi``."""

    if not math.isfinite(psi) or psi <= 0:
        raise ValueError(f"psi must be positive, got {psi}")
    if not (0.0 <= pi_b <= 1.0):
        raise ValueError(f"pi_b must lie in [0, 1], got {pi_b}")
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must lie in (0, 1), got {beta}")

    effect = _effect(est, psi, pi_b)
    if effect <= 0:
        raise NoSolutionError(f"planned effect {effect:.3g} is not positive")
    z_term = Z_CRIT - float(stats.norm.ppf(beta))
    if z_term <= 0:
        raise NoSolutionError(f"target power {1 - beta:.3g} is below the one-sided test size")
    arm1, arm0 = _arm_variances(est, pi_b)
    variance = arm1 + arm0
    if not variance > 0:
        raise DesignUndefinedError("design variance is zero")
    n = (z_term / effect) ** 2 * variance
    return SampleSize(n_per_arm=n, n_per_arm_ceil=math.ceil(n))


def split_total(n_total: int) -> tuple[int, int]:
    """Split a total into (arm 1, arm 0); arm 1 gets the odd subject."""
    if n_total < 2:
        raise ValueError(f"n_total must be at least 2, got {n_total}")
    return (n_total + 1) // 2, n_total // 2


def power_grid(
    study_a: Study,
    curve: PteCurve,
    kappas: Sequence[float],
    psis: Sequence[float],
    n_totals: Sequence[int],
    *,
    seed: int | None = None,
    iterations: int | None = None,
    holdout: float | None = None,
    pi_b: float | None = None,
    threads: int | None = None,
) -> list[PowerGridRow]:
    """Expected power over every (kappa, psi, n_total) cell.

    ``pi_b`` defaults to each region's share of Study A covariates.
    """

    if not kappas or not psis or not n_totals:
        raise ValueError("kappas, psis and n_totals must be nonempty")
    sizes = [(n_total, *split_total(n_total)) for n_total in n_totals]

    rows: list[PowerGridRow] = []
    for kappa in kappas:
        region = build_region(curve, kappa)
        try:
            est = gcv_design(
                study_a, region, iterations, holdout, seed, threads=threads
            )
        except NumericalError as exc:
            raise type(exc)(f"kappa={kappa}: {exc}") from exc
        share = pi_b if pi_b is not None else region.fraction(study_a.w)
        for psi in psis:
            for n_total, n_b1, n_b0 in sizes:
                query = PowerQuery(n_b1=n_b1, n_b0=n_b0, psi=psi, pi_b=share)
                rows.append(
                    PowerGridRow(
                        kappa=kappa,
                        psi=psi,
                        n_total=n_total,
                        power=expected_power(est, query),
                    )
                )
    return rows


__all__ = [
    "DesignEstimates",
    "PowerGridRow",
    "PowerQuery",
    "SampleSize",
    "Z_CRIT",
    "expected_power",
    "gcv_design",
    "power_grid",
    "required_n",
    "split_total",
]
