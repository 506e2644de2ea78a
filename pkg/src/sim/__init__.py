"""Simulation lab: data-generating settings and the Monte Carlo driver."""

from ..store.trial_data import mask_study_b
from .runner import (
    DesignCheckRow,
    EstimatorSummary,
    SimulationReport,
    run_design_check,
    run_simulation,
)
from .settings import (
    SettingSpec,
    generate_study,
    pooled_power,
    true_delta_b,
    true_delta_p,
    true_pi_b,
    true_pte,
)

__all__ = [
    "DesignCheckRow",
    "EstimatorSummary",
    "SettingSpec",
    "SimulationReport",
    "generate_study",
    "mask_study_b",
    "pooled_power",
    "run_design_check",
    "run_simulation",
    "true_delta_b",
    "true_delta_p",
    "true_pi_b",
    "true_pte",
]
