"""Tests for the sliced MI privacy audit."""

import math

import numpy as np
import pytest

from pufferkit.audit import (
    IMPLICATIONS,
    MIN_MARGIN,
    AuditConfig,
    audit_dp,
    audit_pp,
    rejection_rate,
    suggested_margin,
    type1_bound,
)
from pufferkit.core import DataFunction, build_framework
from pufferkit.mechanisms import calibrate_gaussian
from pufferkit.models import ParameterRangeError, ValidationError
from pufferkit.smi import simulate_secret_samples, simulate_slice_samples

pytestmark = pytest.mark.unit


def plugin_config(**overrides) -> AuditConfig:
    params = {"inner": "plugin", "plugin_bins": 5, "p": 8, "workers": 1, "seed": 4}
    return AuditConfig(**(params | overrides))


def test_type1_bound():
    # 2^3 / 0.5 * 3 * 10^-2
    assert type1_bound(2, 1, 0.5, 10_000, 10_000, 10_000) == pytest.approx(0.48)
    assert suggested_margin(1.0, 2, 1, 0.05, 10_000, 10_000, 10_000) == pytest.approx(4.8)
    with pytest.raises(ParameterRangeError):
        type1_bound(2, 1, 0.0, 1, 1, 1)
    with pytest.raises(ParameterRangeError):
        suggested_margin(1.0, 2, 1, 1.0, 1, 1, 1)


def test_margin_must_be_positive():
    with pytest.raises(ValueError):
        AuditConfig(eps=0.1, margin=-0.1)


class TestAuditDP:
    def test_leaky_mechanism_is_rejected(self, leaky_samples):
        report = audit_dp(leaky_samples, plugin_config(eps=0.05, margin=0.02))
        assert report.decision == "violation"
        assert report.argmax_row == 1
        assert report.threshold == pytest.approx(0.07)
        assert not report.heuristic
        assert report.implication == IMPLICATIONS["dp"]

    def test_noise_is_not_rejected(self, quiet_samples):
        report = audit_dp(quiet_samples, plugin_config(eps=0.5, margin=0.1))
        assert report.decision == "no-violation-detected"
        assert report.statistic <= report.threshold
        assert len(report.per_row) == 2

    def test_summary_is_reproducible(self, leaky_samples):
        cfg = plugin_config(eps=0.05, margin=0.02)
        first = audit_dp(leaky_samples, cfg).summary()
        assert first == audit_dp(leaky_samples, cfg).summary()
        assert "runtime_seconds" not in first
        assert first["seeds"]["seed"] == 4

    def test_automatic_margin_is_heuristic(self, quiet_samples):
        report = audit_dp(quiet_samples, plugin_config(eps=0.5, p=2, replicates=3))
        assert report.heuristic
        assert report.margin >= MIN_MARGIN
        assert report.threshold == pytest.approx(0.5 + report.margin)

    def test_bootstrap_null_needs_a_reference(self, leaky_samples):
        cfg = plugin_config(eps=0.05, threshold_method="bootstrap-null", p=2, replicates=3)
        with pytest.raises(ValidationError):
            audit_dp(leaky_samples, cfg)

    def test_bootstrap_null(self, leaky_samples, quiet_samples):
        cfg = plugin_config(eps=0.05, threshold_method="bootstrap-null", p=2, replicates=3)
        report = audit_dp(leaky_samples, cfg, reference=quiet_samples)
        assert report.mode == "bootstrap-null"
        assert report.heuristic
        assert report.decision == "violation"

    @pytest.mark.slow
    def test_default_neural_estimator_rejects_the_leak(self, leaky_samples):
        report = audit_dp(leaky_samples, AuditConfig(eps=0.05, margin=0.1, p=4, workers=1, seed=4))
        assert report.decision == "violation"
        assert report.argmax_row == 1


class TestAuditPP:
    def test_secret_release_is_rejected(self, standard_row_law):
        privates = [DataFunction.row_selector(0, 2, 1)]
        samples = simulate_secret_samples(
            standard_row_law, privates, lambda db, rng: db[0], n=2, m=1000, seed=6
        )
        report = audit_pp(samples, plugin_config(eps=0.1, margin=0.05))
        assert report.target == "pp"
        assert report.implication == IMPLICATIONS["pp"]
        assert report.decision == "violation"


class TestRejectionRate:
    def test_fraction(self, leaky_samples, quiet_samples):
        cfg = plugin_config(eps=0.3, margin=0.05)
        reports = [audit_dp(leaky_samples, cfg), audit_dp(quiet_samples, cfg)]
        assert rejection_rate(reports) == 0.5

    def test_empty(self):
        with pytest.raises(ValidationError):
            rejection_rate([])


@pytest.mark.slow
class TestSeededTrials:
    def test_calibrated_gaussian_mechanism_is_rarely_rejected(self, standard_row_law):
        fw = build_framework(
            {
                "n": 2,
                "k": 1,
                "preset": "dp",
                "theta": {"variant": "product_gaussian", "m": 0.0, "s": 1.0},
            }
        )
        sigma = math.sqrt(calibrate_gaussian(fw, DataFunction.total(2, 1), 0.2).noise.scale)

        def release(db: np.ndarray, rng: np.random.Generator) -> np.ndarray:
            return np.array([db.sum() + sigma * rng.normal()])

        cfg = plugin_config(eps=0.2, margin=0.1, plugin_bins=6, p=4)
        reports = [
            audit_dp(simulate_slice_samples(standard_row_law, release, n=2, m=4000, seed=t), cfg)
            for t in range(100)
        ]
        assert rejection_rate(reports) <= 0.05

    def test_identity_leak_is_always_rejected(self, standard_row_law):
        cfg = plugin_config(eps=0.05, margin=0.1, p=4)
        reports = [
            audit_dp(
                simulate_slice_samples(
                    standard_row_law, lambda db, rng: db[1].copy(), n=2, m=1000, seed=t
                ),
                cfg,
            )
            for t in range(20)
        ]
        assert rejection_rate(reports) >= 0.95
