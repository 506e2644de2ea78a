"""Batch command-line interface for the ETSI pipeline.

Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Callable, NoReturn, Optional, Sequence

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
)

from ..core import config
from ..core.design import (
    DesignEstimates,
    PowerQuery,
    expected_power,
    gcv_design,
    power_grid,
    required_n,
    split_total,
)
from ..core.errors import DataValidationError, NumericalError
from ..core.heterogeneity import PteCurve, SurrogacyRegion, build_region, estimate_pte
from ..core.pooled_test import PooledTestResult, delta_ab_hat, delta_b_hat, fit_mu_a0, pooled_test
from ..historian import (
    AnalysisEvent,
    DesignEvent,
    Ledger,
    LedgerConfig,
    PteEvent,
    RegionEvent,
    ReportRow,
    SimulationEvent,
)
from ..historian.export import summarize as summarize_ledger
from ..sim import SettingSpec, run_design_check, run_simulation
from ..store import reports
from ..store.trial_data import Study, StudyRole, detect_role, load_study, mask_study_b

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class UsageError(Exception):
    """Malformed command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _open_unit(value: float | None, name: str) -> float | None:
    if value is not None and not (0.0 < value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


class RunConfig(BaseModel):
    """Validated flags of one invocation; unset flags stay ``None``."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    stage: str
    study_a: Optional[Path] = None
    study_b: Optional[Path] = None
    curve: Optional[Path] = None
    out: Optional[Path] = None
    ledger: Optional[Path] = None
    kappa: Optional[float] = None
    kappas: Optional[tuple[float, ...]] = None
    alpha: Optional[float] = None
    psi: Optional[float] = Field(default=None, ge=0)
    psis: Optional[tuple[float, ...]] = None
    beta: Optional[float] = None
    pi_b: Optional[float] = Field(default=None, ge=0, le=1)
    n_total: Optional[int] = Field(default=None, ge=2)
    n_totals: Optional[tuple[int, ...]] = None
    n_per_arm: Optional[float] = Field(default=None, ge=1)
    iterations: Optional[int] = Field(default=None, ge=1)
    gcv_iterations: Optional[int] = Field(default=None, ge=1)
    holdout: Optional[float] = None
    seed: Optional[int] = Field(default=None, ge=0)
    grid_size: Optional[int] = Field(default=None, ge=2)
    bandwidth: Optional[float] = Field(default=None, gt=0)
    threads: Optional[int] = Field(default=None, ge=1)
    setting: Optional[int] = None
    n_a: Optional[tuple[int, int]] = None
    n_b: Optional[tuple[int, int]] = None
    quiet: bool = False

    @field_validator("psi", "pi_b", "n_per_arm", "bandwidth", "alpha", "beta", "holdout", "kappa")
    @classmethod
    def _finite(cls, value: float | None) -> float | None:
        if value is not None and not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    @field_validator("alpha", "beta", "holdout", "kappa")
    @classmethod
    def _unit(cls, value: float | None, info: ValidationInfo) -> float | None:
        return _open_unit(value, info.field_name)

    @field_validator("kappas")
    @classmethod
    def _kappa_list(cls, value: tuple[float, ...] | None) -> tuple[float, ...] | None:
        for kappa in value or ():
            _open_unit(kappa, "kappa")
        return value

    @field_validator("psis")
    @classmethod
    def _psi_list(cls, value: tuple[float, ...] | None) -> tuple[float, ...] | None:
        for psi in value or ():
            if not math.isfinite(psi) or psi < 0:
                raise ValueError(f"psi must be finite and non-negative, got {psi}")
        return value

    @field_validator("n_totals")
    @classmethod
    def _total_list(cls, value: tuple[int, ...] | None) -> tuple[int, ...] | None:
        for total in value or ():
            if total < 2:
                raise ValueError(f"n_total must be at least 2, got {total}")
        return value


Handler = Callable[[RunConfig], Optional[BaseModel]]


def _format(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return str(value)


def _emit(**pairs: Any) -> None:
    print(" ".join(f"{key}={_format(value)}" for key, value in pairs.items()))


def _finite_or_none(value: float) -> float | None:
    return None if math.isnan(value) else value


def _load_study_a(run: RunConfig) -> Study:
    if run.study_a is None:
        raise UsageError("--study-a is required")
    return load_study(run.study_a, StudyRole.A)


def _region_from_study(run: RunConfig) -> tuple[Study, PteCurve, SurrogacyRegion]:
    study_a = _load_study_a(run)
    curve = estimate_pte(study_a, run.grid_size, threads=run.threads)
    assert run.kappa is not None
    return study_a, curve, build_region(curve, run.kappa)


def cmd_pte(run: RunConfig) -> BaseModel:
    study_a = _load_study_a(run)
    curve = estimate_pte(study_a, run.grid_size, run.bandwidth, threads=run.threads)
    assert run.out is not None
    reports.write_curve(curve, run.out)
    undefined = int(np.count_nonzero(~np.asarray(curve.defined)))
    _emit(
        out=run.out,
        grid_size=curve.grid.size,
        bandwidth_w=curve.bandwidth_w,
        bandwidth_s=curve.bandwidth_s,
        undefined=undefined,
    )
    return PteEvent(
        study_a=str(run.study_a),
        grid_size=int(curve.grid.size),
        bandwidth_w=curve.bandwidth_w,
        bandwidth_s=curve.bandwidth_s,
        undefined_points=undefined,
        clamp_count=curve.clamp_count,
        fallback_count=curve.fallback_count,
        out=str(run.out),
    )


def cmd_region(run: RunConfig) -> BaseModel:
    study_a: Study | None = None
    if run.curve is not None:
        curve = reports.load_curve(run.curve)
        source = run.curve
    else:
        study_a = _load_study_a(run)
        curve = estimate_pte(study_a, run.grid_size, threads=run.threads)
        source = run.study_a
    assert run.kappas

    regions = [build_region(curve, kappa) for kappa in run.kappas]
    for region in regions:
        pairs: dict[str, Any] = {
            "kappa": region.kappa,
            "intervals": ";".join(f"[{lo!r},{hi!r}]" for lo, hi in region.intervals) or "none",
        }
        if study_a is not None:
            pairs["fraction"] = region.fraction(study_a.w)
        _emit(**pairs)
    if run.out is not None:
        reports.write_regions(regions, run.out)
    return RegionEvent(
        source=str(source),
        kappas=list(run.kappas),
        intervals=[[tuple(interval) for interval in region.intervals] for region in regions],
        out=str(run.out) if run.out is not None else None,
    )


def cmd_test(run: RunConfig) -> BaseModel:
    """Pooled test on Study B, plus the full-outcome and full-surrogate rows when available.

    A Study B file in the fully observed schema is masked by the region first.
    """

    study_a, _, region = _region_from_study(run)
    assert run.study_b is not None
    role = detect_role(run.study_b)
    study_b = load_study(run.study_b, role)

    results: list[PooledTestResult] = []
    if role is StudyRole.A:
        masked = mask_study_b(study_b, region)
        results.append(pooled_test(study_a, masked, region, alpha=run.alpha))
    else:
        results.append(pooled_test(study_a, study_b, region, alpha=run.alpha))
    if study_b.has_full_y:
        results.append(delta_b_hat(study_b, run.alpha))
    if study_b.has_full_s:
        results.append(delta_ab_hat(fit_mu_a0(study_a), study_b, run.alpha))

    for result in results:
        _emit(
            estimator=result.estimator,
            kappa=result.kappa,
            estimate=result.delta_hat,
            se=result.se,
            z=result.z,
            p=result.p_value,
            reject=result.reject,
        )
    if run.out is not None:
        reports.write_test_report(results, run.out)
    return AnalysisEvent(
        study_a=str(run.study_a),
        study_b=str(run.study_b),
        alpha=results[0].alpha,
        rows=[
            ReportRow(
                estimator=result.estimator,
                kappa=_finite_or_none(result.kappa),
                estimate=result.delta_hat,
                se=result.se,
                z=_finite_or_none(result.z),
                p=_finite_or_none(result.p_value),
                reject=bool(result.reject),
            )
            for result in results
        ],
        out=str(run.out) if run.out is not None else None,
    )


def _design_estimates(
    run: RunConfig, study_a: Study, region: SurrogacyRegion
) -> DesignEstimates:
    return gcv_design(
        study_a, region, run.iterations, run.holdout, run.seed, threads=run.threads
    )


def _design_event(
    run: RunConfig, mode: str, kappas: Sequence[float], result: dict[str, float]
) -> DesignEvent:
    return DesignEvent(
        mode=mode,
        study_a=str(run.study_a),
        kappas=list(kappas),
        iterations=run.iterations or config.DEFAULT_GCV_ITERATIONS,
        holdout=run.holdout or config.DEFAULT_HOLDOUT,
        seed=run.seed if run.seed is not None else config.DEFAULT_SEED,
        result=result,
        out=str(run.out) if run.out is not None else None,
    )


def cmd_design_power(run: RunConfig) -> BaseModel:
    study_a, _, region = _region_from_study(run)
    estimates = _design_estimates(run, study_a, region)
    pi_b = run.pi_b if run.pi_b is not None else region.fraction(study_a.w)
    if run.n_total is not None:
        n_b1, n_b0 = (float(size) for size in split_total(run.n_total))
    else:
        assert run.n_per_arm is not None
        n_b1 = n_b0 = run.n_per_arm
    assert run.psi is not None and run.kappa is not None
    power = expected_power(estimates, PowerQuery(n_b1=n_b1, n_b0=n_b0, psi=run.psi, pi_b=pi_b))

    row = {"kappa": run.kappa, "psi": run.psi, "pi_b": pi_b, "n_b1": n_b1, "n_b0": n_b0}
    row["power"] = power
    _emit(**row, tau=estimates.tau, rho=estimates.rho)
    if run.out is not None:
        reports.write_power([row], run.out)
    return _design_event(
        run, "power", [run.kappa], {"power": power, "tau": estimates.tau, "rho": estimates.rho}
    )


def cmd_design_n(run: RunConfig) -> BaseModel:
    study_a, _, region = _region_from_study(run)
    estimates = _design_estimates(run, study_a, region)
    pi_b = run.pi_b if run.pi_b is not None else region.fraction(study_a.w)
    assert run.psi is not None and run.beta is not None and run.kappa is not None
    size = required_n(estimates, run.psi, pi_b, run.beta)

    row = {
        "kappa": run.kappa,
        "psi": run.psi,
        "pi_b": pi_b,
        "beta": run.beta,
        "n_per_arm": size.n_per_arm,
        "n_per_arm_ceil": size.n_per_arm_ceil,
    }
    _emit(**row)
    if run.out is not None:
        reports.write_sample_size([row], run.out)
    return _design_event(
        run,
        "n",
        [run.kappa],
        {"n_per_arm": size.n_per_arm, "n_per_arm_ceil": float(size.n_per_arm_ceil)},
    )


def cmd_design_grid(run: RunConfig) -> BaseModel:
    study_a = _load_study_a(run)
    curve = estimate_pte(study_a, run.grid_size, threads=run.threads)
    assert run.kappas and run.psis and run.n_totals and run.out is not None
    rows = power_grid(
        study_a,
        curve,
        run.kappas,
        run.psis,
        run.n_totals,
        seed=run.seed,
        iterations=run.iterations,
        holdout=run.holdout,
        pi_b=run.pi_b,
        threads=run.threads,
    )
    reports.write_power_grid(rows, run.out)
    _emit(cells=len(rows), out=run.out)
    return _design_event(run, "grid", run.kappas, {"cells": float(len(rows))})


def cmd_simulate(run: RunConfig) -> BaseModel:
    overrides = {
        "iterations": run.iterations,
        "seed": run.seed,
        "kappas": run.kappas,
        "n_a": run.n_a,
        "n_b": run.n_b,
        "grid_size": run.grid_size,
        "gcv_iterations": run.gcv_iterations,
        "holdout": run.holdout,
        "alpha": run.alpha,
    }
    spec = SettingSpec(id=run.setting, **{k: v for k, v in overrides.items() if v is not None})
    report = run_simulation(spec, threads=run.threads, progress=not run.quiet)
    check = run_design_check(spec, report, psi=run.psi, threads=run.threads)

    assert run.out is not None
    estimators = reports.write_estimator_table(
        report.rows, run.out / f"estimators_setting{spec.id}.csv"
    )
    design_check = reports.write_design_check(
        check, run.out / f"design_check_setting{spec.id}.csv"
    )
    for summary in report.rows:
        _emit(
            estimator=summary.estimator,
            kappa=summary.kappa,
            mean_estimate=summary.mean_estimate,
            ese=summary.ese,
            ase=summary.ase,
            rejection_rate=summary.rejection_rate,
        )
    _emit(estimators=estimators, design_check=design_check)
    return SimulationEvent(
        setting=spec.id,
        iterations=spec.iterations,
        seed=spec.seed,
        kappas=list(spec.kappas),
        outputs=[str(estimators), str(design_check)],
    )


def cmd_history(run: RunConfig) -> None:
    path = run.ledger if run.ledger is not None else LedgerConfig().path
    print(json.dumps(summarize_ledger(path), indent=2, sort_keys=True))
    return None


def _common_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, help="worker cap (default ETSI_THREADS)")
    common.add_argument("--quiet", action="store_true", help="warnings only, no progress bar")
    common.add_argument("--log-level", type=str.upper, choices=_LOG_LEVELS)
    return common


def _design_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--study-a", type=Path, required=True)
    shared.add_argument("--iterations", type=int, help="cross-validation splits")
    shared.add_argument("--holdout", type=float)
    shared.add_argument("--seed", type=int)
    shared.add_argument("--grid-size", type=int)
    shared.add_argument("--pi-b", type=float, help="surrogate-only share (default: Study A's)")
    return shared


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="etsi", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    design_shared = _design_parser()

    def add(
        group: Any, name: str, handler: Handler, stage: str, parents: list[argparse.ArgumentParser]
    ) -> argparse.ArgumentParser:
        sub = group.add_parser(name, parents=parents)
        sub.set_defaults(handler=handler, stage=stage)
        return sub

    pte = add(commands, "pte", cmd_pte, "pte", [common])
    pte.add_argument("--study-a", type=Path, required=True)
    pte.add_argument("--grid-size", type=int)
    pte.add_argument("--bandwidth", type=float, help="covariate bandwidth override")
    pte.add_argument("--out", type=Path, required=True)

    region = add(commands, "region", cmd_region, "region", [common])
    source = region.add_mutually_exclusive_group(required=True)
    source.add_argument("--study-a", type=Path)
    source.add_argument("--curve", type=Path)
    region.add_argument("--kappa", dest="kappas", type=float, nargs="+", required=True)
    region.add_argument("--grid-size", type=int)
    region.add_argument("--out", type=Path)

    test = add(commands, "test", cmd_test, "test", [common])
    test.add_argument("--study-a", type=Path, required=True)
    test.add_argument("--study-b", type=Path, required=True)
    test.add_argument("--kappa", type=float, required=True)
    test.add_argument("--alpha", type=float)
    test.add_argument("--grid-size", type=int)
    test.add_argument("--out", type=Path)

    design = commands.add_parser("design")
    modes = design.add_subparsers(dest="mode", required=True)

    power = add(modes, "power", cmd_design_power, "design power", [common, design_shared])
    power.add_argument("--kappa", type=float, required=True)
    power.add_argument("--psi", type=float, required=True)
    sizes = power.add_mutually_exclusive_group(required=True)
    sizes.add_argument("--n-total", type=int)
    sizes.add_argument("--n-per-arm", type=float)
    power.add_argument("--out", type=Path)

    size = add(modes, "n", cmd_design_n, "design n", [common, design_shared])
    size.add_argument("--kappa", type=float, required=True)
    size.add_argument("--psi", type=float, required=True)
    size.add_argument("--beta", type=float, required=True)
    size.add_argument("--out", type=Path)

    grid = add(modes, "grid", cmd_design_grid, "design grid", [common, design_shared])
    grid.add_argument("--kappa", dest="kappas", type=float, nargs="+", required=True)
    grid.add_argument("--psi", dest="psis", type=float, nargs="+", required=True)
    grid.add_argument("--n-total", dest="n_totals", type=int, nargs="+", required=True)
    grid.add_argument("--out", type=Path, required=True)

    simulate = add(commands, "simulate", cmd_simulate, "simulate", [common])
    simulate.add_argument("--setting", type=int, choices=(1, 2, 3), required=True)
    simulate.add_argument("--iterations", type=int)
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--kappas", type=float, nargs="+")
    simulate.add_argument("--n-a", type=int, nargs=2, metavar=("N1", "N0"))
    simulate.add_argument("--n-b", type=int, nargs=2, metavar=("N1", "N0"))
    simulate.add_argument("--grid-size", type=int)
    simulate.add_argument("--gcv-iterations", type=int)
    simulate.add_argument("--holdout", type=float)
    simulate.add_argument("--alpha", type=float)
    simulate.add_argument("--psi", type=float, help="design-check effect (default: true effect)")
    simulate.add_argument("--out", type=Path, required=True, help="directory for the tables")

    history = add(commands, "history", cmd_history, "history", [common])
    history.add_argument("--ledger", type=Path)

    return parser


def _configure_logging(level_name: str | None, quiet: bool) -> None:
    name = "WARNING" if quiet else (level_name or config.DEFAULT_LOG_LEVEL)
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _describe(exc: BaseException) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}"
            for error in exc.errors()
        )
    return str(exc)


def _fail(stage: str, exc: BaseException, code: int) -> int:
    print(f"etsi {stage}: {_describe(exc)}", file=sys.stderr)
    LOGGER.debug("Command failed", extra={"stage": stage, "exit_code": code}, exc_info=True)
    return code


def _record(event: BaseModel) -> None:
    if not config.LEDGER_ENABLED:
        return
    try:
        Ledger().append(event)
    except OSError as exc:
        LOGGER.warning("Could not append to the run ledger", extra={"error": str(exc)})


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    _configure_logging(args.log_level, args.quiet)
    stage: str = args.stage
    handler: Handler = args.handler
    start = time.monotonic()
    try:
        run = RunConfig.model_validate(vars(args))
        event = handler(run)
    except (DataValidationError, OSError) as exc:
        return _fail(stage, exc, EXIT_DATA)
    except NumericalError as exc:
        return _fail(stage, exc, EXIT_NUMERIC)
    except (UsageError, ValueError) as exc:
        return _fail(stage, exc, EXIT_USAGE)

    if event is not None:
        elapsed = int((time.monotonic() - start) * 1000)
        _record(event.model_copy(update={"duration_ms": elapsed}))
    return EXIT_OK


__all__ = [
    "EXIT_DATA",
    "EXIT_NUMERIC",
    "EXIT_OK",
    "EXIT_USAGE",
    "RunConfig",
    "UsageError",
    "build_parser",
    "main",
]
