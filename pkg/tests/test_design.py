from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from src.core.design import (
    Z_CRIT,
    DesignEstimates,
    PowerQuery,
    expected_power,
    gcv_design,
    power_grid,
    required_n,
    split_total,
)
from src.core.errors import DesignUndefinedError, NoSolutionError
from src.core.heterogeneity import PteCurve, SurrogacyRegion, build_region


def _estimates(**overrides) -> DesignEstimates:
    values = dict(
        tau=0.8,
        rho=1.2,
        s1_sq=4.0,
        s2_sq=2.0,
        s3_sq=3.0,
        s4_sq=1.5,
        ybar_1c=2.0,
        ybar_1w=3.0,
        ybar_0c=1.0,
        ybar_0w=1.5,
        delta_c=1.0,
        delta_w=1.5,
        delta_a=1.25,
        pi_a=0.5,
        iterations=10,
        holdout=0.5,
        seed=1,
    )
    values.update(overrides)
    return DesignEstimates(**values)


def _region(study, kind: str) -> SurrogacyRegion:
    lo, hi = float(study.w.min()), float(study.w.max())
    if kind == "upper":
        return SurrogacyRegion(kappa=0.5, intervals=((5.0, hi),), grid_range=(lo, hi))
    return SurrogacyRegion.full(lo, hi) if kind == "full" else SurrogacyRegion.empty(lo, hi)


def _step_curve(study) -> PteCurve:
    grid = np.linspace(float(study.w.min()), float(study.w.max()), 30)
    r_s = np.where(grid >= 5.0, 0.9, 0.1)
    return PteCurve(
        grid=grid,
        delta_k=np.ones(grid.size),
        delta_s_k=1.0 - r_s,
        r_s=r_s,
        defined=np.ones(grid.size, dtype=bool),
    )


def test_zero_alternative_gives_one_sided_size():
    power = expected_power(_estimates(), PowerQuery(n_b1=50, n_b0=50, psi=0.0, pi_b=0.4))
    assert power == pytest.approx(1.0 - stats.norm.cdf(Z_CRIT))
    assert power == pytest.approx(0.025, abs=1e-3)


def test_power_increases_with_effect_and_size():
    est = _estimates()
    small = expected_power(est, PowerQuery(n_b1=20, n_b0=20, psi=1.0, pi_b=0.5))
    larger_n = expected_power(est, PowerQuery(n_b1=80, n_b0=80, psi=1.0, pi_b=0.5))
    larger_psi = expected_power(est, PowerQuery(n_b1=20, n_b0=20, psi=2.0, pi_b=0.5))
    assert 0.0 < small < larger_n < 1.0
    assert small < larger_psi < 1.0


def test_huge_study_power_stays_inside_open_interval():
    power = expected_power(_estimates(), PowerQuery(n_b1=1e9, n_b0=1e9, psi=5.0, pi_b=0.5))
    assert 0.0 < power < 1.0
    assert power == pytest.approx(1.0)


def test_required_n_round_trips_through_power():
    est = _estimates()
    size = required_n(est, psi=0.7, pi_b=0.3, beta=0.1)
    query = PowerQuery(n_b1=size.n_per_arm, n_b0=size.n_per_arm, psi=0.7, pi_b=0.3)
    assert expected_power(est, query) == pytest.approx(0.9, abs=1e-9)
    assert size.n_per_arm_ceil == math.ceil(size.n_per_arm)


def test_halving_alternative_quadruples_n():
    est = _estimates()
    full = required_n(est, psi=1.0, pi_b=0.5, beta=0.2)
    half = required_n(est, psi=0.5, pi_b=0.5, beta=0.2)
    assert half.n_per_arm == pytest.approx(4.0 * full.n_per_arm)


def test_even_odds_target_matches_closed_form():
    est = _estimates()
    pi_b = 0.25
    size = required_n(est, psi=1.0, pi_b=pi_b, beta=0.5)
    effect = (1 - pi_b) * est.tau + pi_b * est.rho
    arm1 = (1 - pi_b) * 4.0 + pi_b * 2.0 + pi_b * (1 - pi_b) * (2.0 - 3.0) ** 2
    arm0 = (1 - pi_b) * 3.0 + pi_b * 1.5 + pi_b * (1 - pi_b) * (1.0 - 1.5) ** 2
    assert size.n_per_arm == pytest.approx((Z_CRIT / effect) ** 2 * (arm1 + arm0))


def test_required_n_without_solution():
    with pytest.raises(NoSolutionError):
        required_n(_estimates(tau=-1.0, rho=-1.0), psi=1.0, pi_b=0.5, beta=0.2)
    with pytest.raises(NoSolutionError):
        required_n(_estimates(), psi=1.0, pi_b=0.5, beta=0.99)
    with pytest.raises(ValueError):
        required_n(_estimates(), psi=0.0, pi_b=0.5, beta=0.2)


def test_power_query_validation():
    with pytest.raises(ValidationError):
        PowerQuery(n_b1=0, n_b0=10, psi=1.0, pi_b=0.5)
    with pytest.raises(ValidationError):
        PowerQuery(n_b1=10, n_b0=10, psi=1.0, pi_b=1.5)
    with pytest.raises(ValidationError):
        PowerQuery(n_b1=10, n_b0=10, psi=float("nan"), pi_b=0.5)


def test_split_total_gives_odd_subject_to_treated_arm():
    assert split_total(900) == (450, 450)
    assert split_total(901) == (451, 450)
    with pytest.raises(ValueError):
        split_total(1)


def test_self_split_with_empty_region_is_classical(setting1_study):
    est = gcv_design(setting1_study, _region(setting1_study, "empty"), 1, resample=False)
    assert est.tau == pytest.approx(1.0)
    assert est.rho == 0.0
    assert est.pi_a == 0.0

    treated = setting1_study.y[setting1_study.arm == 1]
    control = setting1_study.y[setting1_study.arm == 0]
    assert est.delta_a == pytest.approx(treated.mean() - control.mean())
    assert est.s1_sq == pytest.approx(treated.var(ddof=1))
    assert est.s3_sq == pytest.approx(control.var(ddof=1))

    power = expected_power(est, PowerQuery(n_b1=100, n_b0=100, psi=1.0, pi_b=0.0))
    classic = stats.norm.sf(Z_CRIT - 1.0 / math.sqrt(est.s1_sq / 100 + est.s3_sq / 100))
    assert power == pytest.approx(classic)


def test_self_split_with_full_region_puts_effect_inside(setting1_study):
    est = gcv_design(setting1_study, _region(setting1_study, "full"), 1, resample=False)
    treated = setting1_study.y[setting1_study.arm == 1]
    control = setting1_study.y[setting1_study.arm == 0]
    assert est.tau == 0.0
    assert est.delta_a == pytest.approx(treated.mean() - control.mean())
    assert est.rho == pytest.approx(est.delta_w / est.delta_a)
    assert est.pi_a == 1.0


def test_outcome_effect_covers_every_evaluation_subject(setting1_study):
    est = gcv_design(setting1_study, _region(setting1_study, "upper"), 1, resample=False)
    treated = setting1_study.y[setting1_study.arm == 1]
    control = setting1_study.y[setting1_study.arm == 0]
    assert est.delta_a == pytest.approx(treated.mean() - control.mean())
    assert 0.0 < est.pi_a < 1.0
    combined = (1 - est.pi_a) * est.tau + est.pi_a * est.rho
    assert combined != pytest.approx(1.0, abs=1e-9)


def test_cross_validation_is_seeded_and_thread_independent(setting1_study):
    region = _region(setting1_study, "upper")
    first = gcv_design(setting1_study, region, iterations=6, seed=42, threads=1)
    again = gcv_design(setting1_study, region, iterations=6, seed=42, threads=3)
    other = gcv_design(setting1_study, region, iterations=6, seed=43, threads=1)

    assert dataclasses.astuple(first) == dataclasses.astuple(again)
    assert first.delta_a != other.delta_a
    assert first.iterations == 6 and first.seed == 42


def test_cross_validation_rejects_bad_holdout(setting1_study):
    region = _region(setting1_study, "empty")
    with pytest.raises(ValueError):
        gcv_design(setting1_study, region, iterations=2, holdout=1.0)
    with pytest.raises(ValueError):
        gcv_design(setting1_study, region, iterations=0)


def test_null_effect_design_is_undefined(setting1_study):
    flat = dataclasses.replace(setting1_study, y=np.ones(setting1_study.n))
    with pytest.raises(DesignUndefinedError):
        gcv_design(flat, _region(flat, "empty"), 1, resample=False)


def test_power_grid_matches_composed_calls(setting1_study):
    curve = _step_curve(setting1_study)
    rows = power_grid(
        setting1_study,
        curve,
        [0.5],
        [1.0, 2.0],
        [100, 400, 900],
        seed=5,
        iterations=4,
    )
    assert len(rows) == 6

    region = build_region(curve, 0.5)
    est = gcv_design(setting1_study, region, 4, seed=5)
    n_b1, n_b0 = split_total(400)
    query = PowerQuery(n_b1=n_b1, n_b0=n_b0, psi=2.0, pi_b=region.fraction(setting1_study.w))
    cell = next(row for row in rows if row.psi == 2.0 and row.n_total == 400)
    assert cell.power == expected_power(est, query)

    for psi in (1.0, 2.0):
        powers = [row.power for row in rows if row.psi == psi]
        assert powers == sorted(powers)


def test_power_grid_needs_values(setting1_study):
    curve = _step_curve(setting1_study)
    with pytest.raises(ValueError):
        power_grid(setting1_study, curve, [], [1.0], [100])


def _rejecting_first(monkeypatch, per_iteration: int) -> list[int]:
    calls = [0]

    def usable(*_args) -> bool:
        calls[0] += 1
        return calls[0] % (per_iteration + 1) == 0

    monkeypatch.setattr("src.core.design._usable", usable)
    return calls


def test_redraws_within_the_shared_budget_succeed(setting1_study, monkeypatch):
    calls = _rejecting_first(monkeypatch, 5)
    est = gcv_design(setting1_study, _region(setting1_study, "upper"), 4, seed=3, threads=1)
    assert est.redraws == 20
    assert calls[0] == 24


def test_redraws_stop_once_the_shared_budget_is_spent(setting1_study, monkeypatch):
    calls = _rejecting_first(monkeypatch, 15)
    with pytest.raises(DesignUndefinedError, match="cap of 40"):
        gcv_design(setting1_study, _region(setting1_study, "upper"), 4, seed=3, threads=1)
    assert calls[0] <= 40 + 4
