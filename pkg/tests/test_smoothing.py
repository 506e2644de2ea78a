from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from src.core.errors import DegenerateBandwidthError
from src.core.smoothing import (
    FallbackTally,
    KernelConfig,
    bandwidth_etsi,
    bandwidth_rule_of_thumb,
    conditional_cdf_weight_matrix,
    conditional_cdf_weights,
    fit_conditional_mean,
    predict,
    predict_many,
)


def test_rule_of_thumb_on_small_sample():
    expected = 1.06 * min(math.sqrt(2.5), 2.0 / 1.34) * 5 ** (-0.2)
    assert bandwidth_rule_of_thumb([1, 2, 3, 4, 5]) == pytest.approx(expected, rel=1e-12)
    assert bandwidth_rule_of_thumb([1, 2, 3, 4, 5]) == pytest.approx(1.14668, abs=5e-5)


def test_rule_of_thumb_rejects_constant_values():
    with pytest.raises(DegenerateBandwidthError):
        bandwidth_rule_of_thumb([3.0, 3.0, 3.0])


def test_rule_of_thumb_needs_two_values():
    with pytest.raises(ValueError):
        bandwidth_rule_of_thumb([1.0])


def test_rule_of_thumb_uses_sd_when_quartiles_tie():
    values = [0.0] * 10 + [1.0]
    sd = float(np.std(values, ddof=1))
    assert bandwidth_rule_of_thumb(values) == pytest.approx(1.06 * sd * 11 ** (-0.2))


def test_rule_of_thumb_scales_with_affine_maps():
    values = np.array([0.3, 1.9, 2.2, 4.8, 5.0, 7.7])
    base = bandwidth_rule_of_thumb(values)
    assert bandwidth_rule_of_thumb(-3.0 * values + 11.0) == pytest.approx(3.0 * base)


def test_etsi_bandwidth_undersmooths():
    values = [1, 2, 3, 4, 5]
    base = bandwidth_rule_of_thumb(values)
    assert bandwidth_etsi(values, 1) == pytest.approx(base)
    assert bandwidth_etsi(values, 32) == pytest.approx(base / 2.0)
    assert bandwidth_etsi(values, 64) / bandwidth_etsi(values, 32) == pytest.approx(2 ** (-0.2))
    with pytest.raises(ValueError):
        bandwidth_etsi(values, 0)


def test_kernel_config_requires_positive_finite_bandwidth():
    with pytest.raises(ValidationError):
        KernelConfig(h=0.0)
    with pytest.raises(ValidationError):
        KernelConfig(h=float("inf"))


def test_single_point_and_constant_fits():
    one = fit_conditional_mean([1.5], [7.0], KernelConfig(h=0.3))
    assert predict(one, -20.0) == 7.0
    assert predict(one, 1.5) == 7.0

    flat = fit_conditional_mean([0.0, 1.0, 4.0], [2.5, 2.5, 2.5], KernelConfig(h=1.0))
    np.testing.assert_allclose(predict_many(flat, [-1.0, 0.5, 3.0, 9.0]), 2.5)


def test_symmetric_weights_give_midpoint():
    fit = fit_conditional_mean([0.0, 2.0], [0.0, 2.0], KernelConfig(h=1.0))
    assert predict(fit, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_three_point_hand_computed_value():
    fit = fit_conditional_mean([0.0, 1.0, 2.0], [0.0, 1.0, 4.0], KernelConfig(h=1.0))
    phi0, phi1 = stats.norm.pdf(0.0), stats.norm.pdf(1.0)
    expected = (phi0 + 4.0 * phi1) / (phi0 + 2.0 * phi1)
    assert predict(fit, 1.0) == pytest.approx(expected, abs=1e-12)
    assert predict(fit, 1.0) == pytest.approx(1.5481, abs=5e-5)


def test_queries_outside_support_are_clamped_and_tallied():
    fit = fit_conditional_mean([0.0, 1.0, 2.0], [0.0, 1.0, 4.0], KernelConfig(h=1.0))
    assert predict(fit, -50.0) == predict(fit, 0.0)
    assert predict(fit, 60.0) == predict(fit, 2.0)
    assert fit.clamp_count == 2
    assert fit.fallback_count == 0


def test_huge_bandwidth_approaches_sample_mean():
    fit = fit_conditional_mean([0.0, 1.0, 2.0], [0.0, 1.0, 4.0], KernelConfig(h=1e6))
    assert predict(fit, 0.3) == pytest.approx(5.0 / 3.0, abs=1e-9)


def test_underflow_falls_back_to_nearest_point():
    fit = fit_conditional_mean([0.0, 100.0], [1.0, 9.0], KernelConfig(h=0.01))
    assert predict(fit, 49.0) == 1.0
    assert predict(fit, 51.0) == 9.0
    assert fit.fallback_count == 2


def test_fit_rejects_bad_inputs():
    cfg = KernelConfig(h=1.0)
    with pytest.raises(ValueError):
        fit_conditional_mean([], [], cfg)
    with pytest.raises(ValueError):
        fit_conditional_mean([0.0, 1.0], [1.0], cfg)
    with pytest.raises(ValueError):
        fit_conditional_mean([0.0, float("nan")], [1.0, 2.0], cfg)
    fit = fit_conditional_mean([0.0, 1.0], [1.0, 2.0], cfg)
    with pytest.raises(ValueError):
        predict(fit, float("nan"))


def test_predict_many_matches_predict():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=15)
    ys = rng.normal(size=15)
    fit = fit_conditional_mean(xs, ys, KernelConfig(h=0.4))
    points = np.linspace(-3.0, 3.0, 9)
    np.testing.assert_allclose(predict_many(fit, points), [predict(fit, p) for p in points])


def test_cdf_weights_examples():
    cfg = KernelConfig(h=1.0)
    np.testing.assert_allclose(conditional_cdf_weights([2.0], 2.0, cfg), [1.0])

    weights = conditional_cdf_weights([0.0, 1.0], 0.0, cfg)
    phi0, phi1 = stats.norm.pdf(0.0), stats.norm.pdf(1.0)
    np.testing.assert_allclose(weights, [phi0 / (phi0 + phi1), phi1 / (phi0 + phi1)])
    np.testing.assert_allclose(weights, [0.62246, 0.37754], atol=1e-5)

    symmetric = conditional_cdf_weights([-1.0, 0.0, 1.0], 0.0, cfg)
    assert symmetric[0] == pytest.approx(symmetric[2])


def test_cdf_weight_matrix_falls_back_per_row():
    tally = FallbackTally()
    matrix = conditional_cdf_weight_matrix(
        [0.0, 100.0], [0.0, 49.0, 100.0], KernelConfig(h=0.01), tally
    )
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    np.testing.assert_array_equal(matrix[1], [1.0, 0.0])
    assert tally.fallback_count == 1


def test_tally_accumulates():
    tally = FallbackTally()
    tally.record(clamped=2)
    tally.record(fallbacks=3)
    tally.record()
    assert (tally.clamp_count, tally.fallback_count) == (2, 3)
