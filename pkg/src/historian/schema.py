"""Event schema for the run ledger."""

from __future__ import annotations

import os
from datetime import datetime
from pathlib import Path
from typing import Optional
from uuid import uuid4
from zoneinfo import ZoneInfo

from pydantic import BaseModel, Field


def _zone() -> ZoneInfo:
    return ZoneInfo(os.getenv("ETSI_LOG_TZ", "UTC"))


def run_id() -> str:
    """Return a new opaque run identifier."""
    return uuid4().hex


def tz_now() -> str:
    """Return the current timestamp in the configured timezone."""
    return datetime.now(_zone()).isoformat()


class Marker(BaseModel):
    """Marker attached to an event for additional context."""

    type: str
    text: str


class _Event(BaseModel):
    ts: str = Field(default_factory=tz_now)
    run: str = Field(default_factory=run_id)
    duration_ms: int = 0
    markers: list[Marker] = Field(default_factory=list)


class PteEvent(_Event):
    """Recorded after a PTE curve is estimated."""

    kind: str = Field(default="pte", frozen=True)
    study_a: str
    grid_size: int
    bandwidth_w: float
    bandwidth_s: float
    undefined_points: int
    clamp_count: int = 0
    fallback_count: int = 0
    out: Optional[str] = None


class RegionEvent(_Event):
    """Recorded after strong-surrogacy regions are built."""

    kind: str = Field(default="region", frozen=True)
    source: str
    kappas: list[float]
    intervals: list[list[tuple[float, float]]]
    out: Optional[str] = None


class ReportRow(BaseModel):
    """One estimator line of a test report."""

    estimator: str
    kappa: Optional[float] = None
    estimate: float
    se: float
    z: Optional[float] = None
    p: Optional[float] = None
    reject: bool


class AnalysisEvent(_Event):
    """Recorded after a Study B analysis."""

    kind: str = Field(default="test", frozen=True)
    study_a: str
    study_b: str
    alpha: float
    rows: list[ReportRow]
    out: Optional[str] = None


class DesignEvent(_Event):
    """Recorded after a design calculation."""

    kind: str = Field(default="design", frozen=True)
    mode: str
    study_a: str
    kappas: list[float]
    iterations: int
    holdout: float
    seed: int
    result: dict[str, float] = Field(default_factory=dict)
    out: Optional[str] = None


class SimulationEvent(_Event):
    """Recorded after a simulation run."""

    kind: str = Field(default="simulation", frozen=True)
    setting: int
    iterations: int
    seed: int
    kappas: list[float]
    outputs: list[str] = Field(default_factory=list)


def _ledger_path_from_env() -> Path:
    value = os.getenv("ETSI_LEDGER", "data/historian/ledger.jsonl")
    return Path(value)


def _rotate_mb_from_env() -> int:
    value = os.getenv("ETSI_LEDGER_ROTATE_MB", "10")
    try:
        return int(value)
    except ValueError:  # pragma: no cover
        return 10


class LedgerConfig(BaseModel):
    """Runtime configuration for the ledger."""

    path: Path = Field(default_factory=_ledger_path_from_env)
    rotate_mb: int = Field(default_factory=_rotate_mb_from_env)


__all__ = [
    "AnalysisEvent",
    "DesignEvent",
    "LedgerConfig",
    "Marker",
    "PteEvent",
    "RegionEvent",
    "ReportRow",
    "SimulationEvent",
    "run_id",
    "tz_now",
]
