"""Monte Carlo driver: fixed Study A, fresh Study B per iteration."""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from ..core import config
from ..core.design import PowerQuery, expected_power, gcv_design
from ..core.errors import DesignUndefinedError, EtsiError
from ..core.heterogeneity import PteCurve, SurrogacyRegion, build_region, estimate_pte
from ..core.pooled_test import (
    PooledTestResult,
    delta_ab_hat,
    delta_b_hat,
    fit_mu_a0,
    pooled_test,
)
from ..core.rng import KeyedStreams
from ..store.trial_data import Study, mask_study_b
from .settings import SettingSpec, generate_study, true_delta_b, true_pi_b

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorSummary:
    """A single estimator (and kappa) summarised across iterations."""

    setting: int
    estimator: str
    kappa: float
    mean_estimate: float
    ese: float
    ase: float
    effect_size: float
    rejection_rate: float
    pi_b_true: float

    @property
    def ese_defined(self) -> bool:
        return not math.isnan(self.ese)


@dataclass(frozen=True)
class DesignCheckRow:
    setting: int
    kappa: float
    estimated_power: float
    empirical_power: float


@dataclass(frozen=True)
class SimulationReport:
    setting: int
    seed: int
    n_a: tuple[int, int]
    n_b: tuple[int, int]
    iterations: int
    rows: tuple[EstimatorSummary, ...]
    study_a: Study = field(repr=False, compare=False)
    curve: PteCurve = field(repr=False, compare=False)

    def row(self, estimator: str, kappa: float | None = None) -> EstimatorSummary:
        for summary in self.rows:
            if summary.estimator != estimator:
                continue
            if kappa is None or (not math.isnan(summary.kappa) and summary.kappa == kappa):
                return summary
        raise KeyError(f"no row for {estimator} at kappa={kappa}")


def _summarize(
    spec: SettingSpec,
    estimator: str,
    kappa: float,
    results: list[PooledTestResult],
    pi_b_true: float,
) -> EstimatorSummary:
    estimates = np.array([result.delta_hat for result in results])
    errors = np.array([result.se for result in results])
    rejections = np.array([result.reject for result in results], dtype=float)
    tested = errors > 0
    ratios = estimates[tested] / errors[tested]
    return EstimatorSummary(
        setting=spec.id,
        estimator=estimator,
        kappa=kappa,
        mean_estimate=float(estimates.mean()),
        ese=float(estimates.std(ddof=1)) if estimates.size >= 2 else math.nan,
        ase=float(errors.mean()),
        effect_size=float(ratios.mean()) if ratios.size else math.nan,
        rejection_rate=float(rejections.mean()),
        pi_b_true=pi_b_true,
    )


def run_simulation(
    spec: SettingSpec, *, threads: int | None = None, progress: bool = False
) -> SimulationReport:
    """Draw Study A once, then analyse ``spec.iterations`` independent Study B draws.

    Iteration ``t`` uses keyed stream ``t + 1``, and results are aggregated in
    iteration order, so the report does not depend on ``threads``.
    """

    workers = threads if threads is not None else config.DEFAULT_THREADS
    streams = KeyedStreams(spec.seed)
    study_a = generate_study(spec, *spec.n_a, streams.study_a())
    curve = estimate_pte(study_a, spec.grid_size, threads=workers)
    regions: list[SurrogacyRegion] = [build_region(curve, kappa) for kappa in spec.kappas]
    fit_mu = fit_mu_a0(study_a)
    LOGGER.info(
        "Simulation prepared",
        extra={
            "setting": spec.id,
            "seed": spec.seed,
            "regions": [region.intervals for region in regions],
        },
    )

    def run(iteration: int) -> list[PooledTestResult]:
        try:
            full_b = generate_study(spec, *spec.n_b, streams.iteration(iteration))
            results = [
                delta_b_hat(full_b, spec.alpha),
                delta_ab_hat(fit_mu, full_b, spec.alpha),
            ]
            for region in regions:
                masked = mask_study_b(full_b, region)
                results.append(pooled_test(study_a, masked, region, alpha=spec.alpha))
            return results
        except EtsiError as exc:
            raise type(exc)(f"iteration {iteration}: {exc}") from exc

    parallel = Parallel(n_jobs=workers, backend="threading", return_as="generator")
    per_iteration = list(
        tqdm(
            parallel(delayed(run)(iteration) for iteration in range(spec.iterations)),
            total=spec.iterations,
            desc=f"Setting {spec.id}",
            disable=not progress,
            file=sys.stderr,
        )
    )

    rows = [
        _summarize(spec, "delta_b", math.nan, [r[0] for r in per_iteration], 0.0),
        _summarize(spec, "delta_ab", math.nan, [r[1] for r in per_iteration], 1.0),
    ]
    for k, region in enumerate(regions):
        rows.append(
            _summarize(
                spec,
                "delta_p",
                region.kappa,
                [r[2 + k] for r in per_iteration],
                true_pi_b(spec, region),
            )
        )
    if spec.iterations == 1:
        LOGGER.warning("Single iteration: empirical standard errors are undefined")

    return SimulationReport(
        setting=spec.id,
        seed=spec.seed,
        n_a=spec.n_a,
        n_b=spec.n_b,
        iterations=spec.iterations,
        rows=tuple(rows),
        study_a=study_a,
        curve=curve,
    )


def run_design_check(
    spec: SettingSpec,
    report: SimulationReport | None = None,
    *,
    psi: float | None = None,
    threads: int | None = None,
) -> list[DesignCheckRow]:
    """Pair the design-stage power prediction with the simulated rejection rate per kappa.

    ``psi`` defaults to the population treatment effect. A kappa whose design
    ratios are undefined gets ``NaN`` estimated power.
    """

    simulated = report if report is not None else run_simulation(spec, threads=threads)
    alternative = psi if psi is not None else true_delta_b(spec.id)
    n_b1, n_b0 = spec.n_b

    rows = []
    for kappa in spec.kappas:
        empirical = simulated.row("delta_p", kappa).rejection_rate
        region = build_region(simulated.curve, kappa)
        try:
            estimates = gcv_design(
                simulated.study_a,
                region,
                spec.gcv_iterations,
                spec.holdout,
                spec.seed,
                threads=threads,
            )
            query = PowerQuery(
                n_b1=n_b1,
                n_b0=n_b0,
                psi=alternative,
                pi_b=region.fraction(simulated.study_a.w),
            )
            estimated = expected_power(estimates, query)
        except DesignUndefinedError as exc:
            LOGGER.warning(
                "Design undefined; estimated power left blank",
                extra={"kappa": kappa, "reason": str(exc)},
            )
            estimated = math.nan
        rows.append(
            DesignCheckRow(
                setting=spec.id,
                kappa=kappa,
                estimated_power=estimated,
                empirical_power=empirical,
            )
        )
    return rows


__all__ = [
    "DesignCheckRow",
    "EstimatorSummary",
    "SimulationReport",
    "run_design_check",
    "run_simulation",
]
