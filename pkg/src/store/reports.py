"""CSV report formats: PTE curves, regions, test reports, design outputs, simulation tables.

Every writer emits an exact header and leaves undefined numbers empty; every
loader checks the header before returning the rows.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from ..core.errors import SchemaError
from ..core.heterogeneity import PteCurve, SurrogacyRegion
from ..core.pooled_test import PooledTestResult

CURVE_HEADER = ("w", "delta_k", "delta_s_k", "r_s", "defined")
REGION_HEADER = ("kappa", "lower", "upper")
TEST_HEADER = ("estimator", "kappa", "estimate", "se", "z", "p", "reject")
POWER_HEADER = ("kappa", "psi", "pi_b", "n_b1", "n_b0", "power")
POWER_GRID_HEADER = ("kappa", "psi", "n_total", "power")
SAMPLE_SIZE_HEADER = ("kappa", "psi", "pi_b", "beta", "n_per_arm", "n_per_arm_ceil")
ESTIMATOR_HEADER = (
    "setting",
    "estimator",
    "kappa",
    "mean_estimate",
    "ese",
    "ase",
    "effect_size",
    "rejection_rate",
    "pi_b_true",
)
DESIGN_CHECK_HEADER = ("setting", "kappa", "estimated_power", "empirical_power")


def _as_mapping(record: Any) -> Mapping[str, Any]:
    if dataclasses.is_dataclass(record) and not isinstance(record, type):
        return dataclasses.asdict(record)
    return record


def write_records(path: str | Path, header: Sequence[str], records: Iterable[Any]) -> Path:
    """Write dataclass or mapping records under ``header``; extra fields are dropped."""

    mappings = [_as_mapping(record) for record in records]
    rows = [{column: mapping.get(column) for column in header} for mapping in mappings]
    frame = pd.DataFrame(rows, columns=list(header))
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, na_rep="", lineterminator="\n")
    return target


def read_records(path: str | Path, header: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding="utf-8-sig")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file is empty; expected header {','.join(header)}") from exc
    if tuple(frame.columns) != tuple(header):
        raise SchemaError(
            f"{path}: header {','.join(map(str, frame.columns))} "
            f"does not match {','.join(header)}"
        )
    return frame


def write_curve(curve: PteCurve, path: str | Path) -> Path:
    frame = pd.DataFrame(
        {
            "w": curve.grid,
            "delta_k": curve.delta_k,
            "delta_s_k": curve.delta_s_k,
            "r_s": np.where(curve.defined, curve.r_s, np.nan),
            "defined": np.asarray(curve.defined, dtype=int),
        },
        columns=list(CURVE_HEADER),
    )
    return write_records(path, CURVE_HEADER, frame.to_dict("records"))


def load_curve(path: str | Path) -> PteCurve:
    frame = read_records(path, CURVE_HEADER)
    defined = frame["defined"].to_numpy(dtype=int) == 1
    r_s = frame["r_s"].to_numpy(dtype=float)
    return PteCurve(
        grid=frame["w"].to_numpy(dtype=float),
        delta_k=frame["delta_k"].to_numpy(dtype=float),
        delta_s_k=frame["delta_s_k"].to_numpy(dtype=float),
        r_s=np.where(defined, r_s, np.nan),
        defined=defined,
    )


def write_regions(regions: Iterable[SurrogacyRegion], path: str | Path) -> Path:
    """One row per interval; an empty region is one row with blank bounds."""

    rows: list[dict[str, Any]] = []
    for region in regions:
        if region.is_empty:
            rows.append({"kappa": region.kappa, "lower": None, "upper": None})
        for lower, upper in region.intervals:
            rows.append({"kappa": region.kappa, "lower": lower, "upper": upper})
    return write_records(path, REGION_HEADER, rows)


def load_regions(path: str | Path) -> pd.DataFrame:
    return read_records(path, REGION_HEADER)


def report_rows(results: Iterable[PooledTestResult]) -> list[dict[str, Any]]:
    return [
        {
            "estimator": result.estimator,
            "kappa": result.kappa,
            "estimate": result.delta_hat,
            "se": result.se,
            "z": result.z,
            "p": result.p_value,
            "reject": int(result.reject),
        }
        for result in results
    ]


def write_test_report(results: Iterable[PooledTestResult], path: str | Path) -> Path:
    return write_records(path, TEST_HEADER, report_rows(results))


def load_test_report(path: str | Path) -> pd.DataFrame:
    return read_records(path, TEST_HEADER)


def write_power(rows: Iterable[Any], path: str | Path) -> Path:
    return write_records(path, POWER_HEADER, rows)


def write_power_grid(rows: Iterable[Any], path: str | Path) -> Path:
    return write_records(path, POWER_GRID_HEADER, rows)


def load_power_grid(path: str | Path) -> pd.DataFrame:
    return read_records(path, POWER_GRID_HEADER)


def write_sample_size(rows: Iterable[Any], path: str | Path) -> Path:
    return write_records(path, SAMPLE_SIZE_HEADER, rows)


def write_estimator_table(rows: Iterable[Any], path: str | Path) -> Path:
    return write_records(path, ESTIMATOR_HEADER, rows)


def load_estimator_table(path: str | Path) -> pd.DataFrame:
    return read_records(path, ESTIMATOR_HEADER)


def write_design_check(rows: Iterable[Any], path: str | Path) -> Path:
    return write_records(path, DESIGN_CHECK_HEADER, rows)


def load_design_check(path: str | Path) -> pd.DataFrame:
    return read_records(path, DESIGN_CHECK_HEADER)


__all__ = [
    "CURVE_HEADER",
    "POWER_GRID_HEADER",
    "POWER_HEADER",
    "REGION_HEADER",
    "SAMPLE_SIZE_HEADER",
    "ESTIMATOR_HEADER",
    "DESIGN_CHECK_HEADER",
    "TEST_HEADER",
    "load_curve",
    "load_power_grid",
    "load_regions",
    "load_estimator_table",
    "load_design_check",
    "load_test_report",
    "read_records",
    "report_rows",
    "write_curve",
    "write_power",
    "write_power_grid",
    "write_records",
    "write_regions",
    "write_sample_size",
    "write_estimator_table",
    "write_design_check",
    "write_test_report",
]
