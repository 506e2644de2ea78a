"""Historian package: append-only ledger of pipeline runs."""

from .ledger import Ledger
from .schema import (
    AnalysisEvent,
    DesignEvent,
    LedgerConfig,
    Marker,
    PteEvent,
    RegionEvent,
    ReportRow,
    SimulationEvent,
    run_id,
    tz_now,
)

__all__ = [
    "AnalysisEvent",
    "DesignEvent",
    "Ledger",
    "LedgerConfig",
    "Marker",
    "PteEvent",
    "RegionEvent",
    "ReportRow",
    "SimulationEvent",
    "run_id",
    "tz_now",
]
