#!/usr/bin/env python3
"""Tests for the entropy-based confidence channels and calibration."""

import math
import sys

import numpy as np
import pytest
from scipy import special, stats

from metatool.core.errors import ValidationError
from metatool.services.confidence import (
    CalibrationModel,
    Channel,
    ConfidenceReport,
    ConfidenceScore,
    DirichletParams,
    as_probvec,
    confidence_from_entropy,
    dirichlet_entropy,
    ece,
    entropy_categorical,
    epistemic_aleatoric_decompose,
    fit_temperature,
    squash_to_confidence,
)


def test_categorical_entropy_extremes():
    assert entropy_categorical([0.25] * 4) == pytest.approx(math.log(4))
    assert entropy_categorical([1.0, 0.0, 0.0]) == 0.0
    assert entropy_categorical([0.25, 0.75]) == pytest.approx(0.562335, abs=1e-6)
    assert confidence_from_entropy(math.log(4), 4) == pytest.approx(0.0, abs=1e-12)
    assert confidence_from_entropy(0.0, 4) == 1.0
    assert confidence_from_entropy(0.0, 1) == 1.0


def test_categorical_entropy_is_symmetric_and_peaks_at_uniform():
    rng = np.random.default_rng(17)
    for n in range(2, 9):
        uniform = entropy_categorical(np.full(n, 1.0 / n))
        for _ in range(1000):
            p = rng.dirichlet(np.full(n, 0.7))
            h = entropy_categorical(p)
            assert entropy_categorical(rng.permutation(p)) == pytest.approx(h, abs=1e-12)
            assert h <= uniform + 1e-12
            assert 0.0 <= confidence_from_entropy(h, n) <= 1.0


def test_probability_vectors_are_validated():
    with pytest.raises(ValidationError):
        as_probvec([0.5, 0.6])
    with pytest.raises(ValidationError):
        as_probvec([1.2, -0.2])
    with pytest.raises(ValidationError):
        DirichletParams([1.0, 0.0])
    with pytest.raises(ValidationError):
        confidence_from_entropy(2.0, 4)


def test_dirichlet_entropy_matches_scipy():
    rng = np.random.default_rng(3)
    assert dirichlet_entropy(DirichletParams([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)
    assert dirichlet_entropy(DirichletParams([1.0, 1.0, 1.0])) == pytest.approx(-math.log(2.0))
    for _ in range(20):
        alpha = rng.uniform(0.2, 30.0, size=rng.integers(2, 9))
        expected = stats.dirichlet(alpha).entropy()
        assert dirichlet_entropy(DirichletParams(alpha)) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_dirichlet_entropy_falls_as_counts_scale_up():
    rng = np.random.default_rng(23)
    for _ in range(500):
        alpha = rng.uniform(1.0, 20.0, size=rng.integers(2, 9))
        k = rng.uniform(1.05, 5.0)
        assert dirichlet_entropy(DirichletParams(k * alpha)) < dirichlet_entropy(DirichletParams(alpha))


def test_epistemic_part_is_never_negative():
    rng = np.random.default_rng(29)
    for _ in range(1000):
        alpha = rng.uniform(0.1, 50.0, size=rng.integers(2, 9))
        total, aleatoric, epistemic = epistemic_aleatoric_decompose(DirichletParams(alpha))
        assert epistemic >= -1e-12
        assert total == pytest.approx(aleatoric + epistemic)


def test_decomposition_adds_up_and_shrinks_with_data():
    total, aleatoric, epistemic = epistemic_aleatoric_decompose(DirichletParams([2.0, 2.0]))
    assert total == pytest.approx(aleatoric + epistemic)
    assert epistemic > 0.0
    _, _, sharp = epistemic_aleatoric_decompose(DirichletParams([200.0, 200.0]))
    assert 0.0 <= sharp < epistemic
    total, aleatoric, _ = epistemic_aleatoric_decompose(DirichletParams([1.0, 1.0]))
    assert total == pytest.approx(math.log(2.0))
    assert aleatoric == pytest.approx(0.5)


def test_aleatoric_term_matches_monte_carlo():
    rng = np.random.default_rng(11)
    z = []
    for _ in range(50):
        alpha = rng.uniform(0.5, 10.0, size=rng.integers(2, 6))
        _, aleatoric, _ = epistemic_aleatoric_decompose(DirichletParams(alpha))
        draws = rng.dirichlet(alpha, size=100_000)
        h = -np.sum(np.where(draws > 0, draws * np.log(np.clip(draws, 1e-300, None)), 0.0), axis=1)
        se = h.std(ddof=1) / math.sqrt(h.size)
        z.append((h.mean() - aleatoric) / se)
    z = np.abs(np.array(z))
    assert z.max() <= 4.0
    assert np.mean(z <= 3.0) >= 0.9


def test_squash_midpoint_and_direction():
    assert squash_to_confidence(1.3, 1.3, 0.7) == pytest.approx(0.5)
    assert squash_to_confidence(0.0, 1.0, 1.0) > 0.5 > squash_to_confidence(2.0, 1.0, 1.0)
    with pytest.raises(ValidationError):
        squash_to_confidence(0.0, 0.0, 0.0)


def test_report_rejects_duplicates_and_serializes_nulls():
    report = ConfidenceReport(timestamp=3)
    report.add(ConfidenceScore(Channel.DECISION, 0.1, 0.9))
    with pytest.raises(ValidationError):
        report.add(ConfidenceScore(Channel.DECISION, 0.2, 0.8))
    with pytest.raises(ValidationError):
        report.value(Channel.MODEL)
    report.mark_missing(Channel.CONTROL, "no-tool")

    data = report.to_dict()
    assert data["timestamp"] == 3
    assert data["channels"]["decision"] == {"entropy": 0.1, "value": 0.9}
    assert data["channels"]["control"] is None
    assert data["missing"]["control"] == "no-tool"
    assert data["missing"]["perceptual"] == "not-provided"
    assert set(data["channels"]) == {c.value for c in Channel}


def test_score_outside_unit_interval_is_rejected():
    with pytest.raises(ValidationError):
        ConfidenceScore(Channel.UTILITY, 0.0, 1.5)


def test_temperature_recovers_overconfidence():
    rng = np.random.default_rng(5)
    z = rng.normal(size=3000)
    hits = rng.random(z.size) < 1.0 / (1.0 + np.exp(-z))
    conf = 1.0 / (1.0 + np.exp(-3.0 * z))
    model = fit_temperature(list(zip(conf, hits)))
    assert 2.0 < model.temperature < 4.5
    assert model.nll_after <= model.nll_before
    assert not model.degenerate


def test_temperature_fit_edge_cases():
    model = fit_temperature([(0.7, True)] * 20)
    assert model.temperature == 1.0 and model.degenerate
    with pytest.raises(ValidationError):
        fit_temperature([(0.7, True)] * 5)
    coin = fit_temperature([(0.5, i % 2 == 0) for i in range(40)])
    assert coin.temperature == 1.0 and coin.degenerate


def test_calibrated_confidences_keep_unit_temperature():
    rng = np.random.default_rng(31)
    conf = rng.uniform(0.05, 0.95, size=5000)
    hits = rng.random(conf.size) < conf
    samples = list(zip(conf, hits))
    model = fit_temperature(samples)
    assert abs(model.temperature - 1.0) <= 0.15
    assert not model.degenerate
    assert ece(samples) <= 0.05


def test_fitted_temperature_never_raises_calibration_error():
    rng = np.random.default_rng(37)
    for _ in range(20):
        z = rng.normal(scale=1.5, size=600)
        hits = rng.random(z.size) < special.expit(z)
        conf = special.expit(rng.uniform(0.3, 3.0) * z + rng.uniform(-1.0, 1.0))
        samples = list(zip(conf, hits))
        model = fit_temperature(samples)
        recalibrated = list(zip(model.apply(conf), hits))
        assert ece(recalibrated) <= ece(samples) + 1e-9


def test_identity_calibration():
    cal = CalibrationModel()
    assert cal.apply(0.3) == pytest.approx(0.3)
    assert isinstance(cal.apply(0.3), float)
    np.testing.assert_allclose(cal.apply(np.array([0.1, 0.9])), [0.1, 0.9])
    with pytest.raises(ValidationError):
        CalibrationModel(temperature=0.0)


def test_expected_calibration_error():
    assert ece([(0.5, True), (0.5, False)] * 10) == pytest.approx(0.0)
    assert ece([(1.0, False)] * 4) == pytest.approx(1.0)
    assert ece([(0.95, True), (0.05, False)], bins=10) == pytest.approx(0.05)


def main() -> int:
    """Run this module's tests."""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
