"""Tests for sliced mutual information and its estimators."""

import math

import numpy as np
import pytest
import torch

from pufferkit.core import DataFunction, RowLaw
from pufferkit.infotheory import BlackBox
from pufferkit.models import ValidationError
from pufferkit.sampling import stream
from pufferkit.smi import (
    NeuralDVConfig,
    ReluCritic,
    SliceSampleSet,
    dv_neural_mi,
    gaussian_joint_mi,
    plugin_inner,
    plugin_mi,
    project_l1_ball,
    simulate_secret_samples,
    simulate_slice_samples,
    sliced_mi,
    smi_dp_statistic,
    smi_gaussian_oracle,
    smi_mc,
    smi_secret_statistic,
)

pytestmark = pytest.mark.unit


class TestCritic:
    @pytest.mark.parametrize(
        "neurons,a,expected", [(1, None, 1.0), (64, None, 32.0), (8, 3.0, 3.0)]
    )
    def test_box(self, neurons, a, expected):
        assert NeuralDVConfig(neurons=neurons, a=a).box == pytest.approx(expected)

    @pytest.mark.parametrize("neurons,expected", [(2, 1.0), (64, math.log(math.log(64)))])
    def test_theory_box(self, neurons, expected):
        box = NeuralDVConfig(neurons=neurons, box_rule="theory").box
        assert box == pytest.approx(expected)

    def test_l1_projection(self):
        projected = project_l1_ball(torch.tensor([[3.0, 1.0], [0.2, -0.3]]), 1.0)
        torch.testing.assert_close(projected, torch.tensor([[1.0, 0.0], [0.2, -0.3]]))

    def test_constraints_hold_after_projection(self):
        critic = ReluCritic(3, 8, 2.0, torch.Generator().manual_seed(0))
        with torch.no_grad():
            for param in critic.parameters():
                param.mul_(10.0)
        critic.project()
        assert critic.out.weight.abs().max() <= 2.0 / 16 + 1e-12
        assert critic.hidden.bias.abs().max() <= 1.0
        assert critic.hidden.weight.abs().sum(dim=1).max() <= 1.0 + 1e-9
        assert critic.skip.weight.abs().sum() <= 2.0 + 1e-9


class TestDV:
    def test_constant_input_is_degenerate(self):
        est = dv_neural_mi(np.ones(50), stream(0).normal(size=50))
        assert est.degenerate
        assert est.value == 0.0

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            dv_neural_mi(np.array([1.0]), np.array([2.0]))

    def test_reproducible(self):
        rng = stream(1)
        u = rng.normal(size=200)
        v = u + rng.normal(size=200)
        cfg = NeuralDVConfig(neurons=8, steps=20)
        assert dv_neural_mi(u, v, cfg).value == dv_neural_mi(u, v, cfg).value

    def test_plain_gradient_steps(self):
        rng = stream(1)
        u = rng.normal(size=200)
        v = u + rng.normal(size=200)
        sgd = NeuralDVConfig(neurons=8, steps=20, optimizer="sgd")
        value = dv_neural_mi(u, v, sgd).value
        assert math.isfinite(value)
        assert value == dv_neural_mi(u, v, sgd).value
        assert value != dv_neural_mi(u, v, sgd.model_copy(update={"optimizer": "adam"})).value

    @pytest.mark.slow
    def test_separates_dependent_from_independent(self):
        rng = stream(2)
        u = rng.normal(size=2000)
        dependent = dv_neural_mi(u, u + 0.5 * rng.normal(size=2000))
        independent = dv_neural_mi(u, rng.normal(size=2000))
        # true values are 1/2 log 5 and 0
        assert dependent.value > 0.3
        assert dependent.value > independent.value + 0.2

    @pytest.mark.slow
    def test_median_over_seeds_matches_the_bivariate_gaussian(self):
        expected = -0.5 * math.log(1 - 0.8**2)
        values = []
        for seed in range(20):
            rng = stream(seed)
            u = rng.normal(size=4000)
            v = 0.8 * u + 0.6 * rng.normal(size=4000)
            cfg = NeuralDVConfig(neurons=64, steps=500, init_seed=seed)
            values.append(dv_neural_mi(u, v, cfg).value)
        assert float(np.median(values)) == pytest.approx(expected, abs=0.05)


class TestPlugin:
    def test_identical_inputs_give_log_bins(self):
        u = stream(3).normal(size=1000)
        assert plugin_mi(u, u, bins=10) == pytest.approx(math.log(10))

    def test_bins_checked(self):
        with pytest.raises(ValidationError):
            plugin_mi(np.arange(5.0), np.arange(5.0), bins=0)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            plugin_mi(np.arange(5.0), np.arange(6.0))


class TestSlicedMI:
    def test_single_row_reduces_to_plain_mi(self):
        rng = stream(4)
        x = rng.normal(size=(1, 2000, 1))
        y = x + rng.normal(size=(1, 2000, 1))
        samples = SliceSampleSet.from_arrays(x, y, np.zeros((1, 2000, 0)))
        # scalar slices are +-1, which only relabels the equal-frequency bins
        est = smi_mc(samples, 0, p=3, inner=plugin_inner(10))
        expected = plugin_mi(x[0, :, 0], y[0, :, 0], bins=10)
        assert est.value == pytest.approx(expected, abs=1e-12)
        assert est.stderr == pytest.approx(0.0, abs=1e-12)

    def test_workers_do_not_change_the_estimate(self, leaky_samples):
        serial = smi_mc(leaky_samples, 1, p=6, inner=plugin_inner(5), seed=3, workers=1)
        parallel = smi_mc(leaky_samples, 1, p=6, inner=plugin_inner(5), seed=3, workers=3)
        assert serial.per_projection == parallel.per_projection

    def test_needs_a_non_empty_block(self):
        with pytest.raises(ValidationError):
            sliced_mi(np.arange(10.0), [np.zeros((10, 0))], p=2, inner=plugin_inner(2))

    def test_projection_count(self):
        with pytest.raises(ValidationError):
            sliced_mi(np.arange(10.0), [np.arange(10.0)], p=0)

    def test_dp_statistic_finds_the_leaked_row(self, leaky_samples):
        value, argmax, per_row = smi_dp_statistic(leaky_samples, p=8, inner=plugin_inner(5))
        assert argmax == 1
        assert len(per_row) == 3
        assert value == per_row[1].value
        assert value > 1.0
        assert max(per_row[0].value, per_row[2].value) < 0.2

    def test_secret_statistic(self, standard_row_law):
        privates = [DataFunction.row_selector(0, 2, 1), DataFunction.row_selector(1, 2, 1)]
        samples = simulate_secret_samples(
            standard_row_law, privates, lambda db, rng: db[0], n=2, m=1000, seed=5
        )
        value, argmax, per_secret = smi_secret_statistic(samples, p=4, inner=plugin_inner(5))
        assert argmax == 0
        assert value > per_secret[1].value


class TestGaussianOracle:
    @pytest.mark.parametrize("rho", [0.3, 0.8])
    def test_scalar_blocks_are_exact(self, rho):
        cov = np.array([[1.0, rho], [rho, 1.0]])
        expected = -0.5 * math.log(1 - rho * rho)
        assert gaussian_joint_mi(cov, 1) == pytest.approx(expected)
        value, stderr = smi_gaussian_oracle(cov, 1, 1, n_proj=100)
        assert value == pytest.approx(expected)
        assert stderr == pytest.approx(0.0, abs=1e-12)

    def test_independent_blocks(self):
        value, _ = smi_gaussian_oracle(np.eye(3), 1, 1, n_proj=100)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_slicing_never_exceeds_the_full_information(self):
        cov = np.array(
            [
                [1.0, 0.0, 0.6, 0.0],
                [0.0, 1.0, 0.0, 0.6],
                [0.6, 0.0, 1.0, 0.0],
                [0.0, 0.6, 0.0, 1.0],
            ]
        )
        value, _ = smi_gaussian_oracle(cov, 2, 2, n_proj=2000)
        assert 0.0 < value < gaussian_joint_mi(cov, 2)

    def test_singular_covariance(self):
        with pytest.raises(ValidationError):
            gaussian_joint_mi(np.ones((2, 2)), 1)

    def test_block_sizes(self):
        with pytest.raises(ValidationError):
            smi_gaussian_oracle(np.eye(2), 2, 1)

    @pytest.mark.slow
    def test_slicing_bound_on_random_covariances(self):
        rng = stream(21)
        for _ in range(50):
            a = rng.normal(size=(5, 5))
            cov = a @ a.T + 0.1 * np.eye(5)
            value, _ = smi_gaussian_oracle(cov, 2, 2, n_proj=2000)
            assert value <= gaussian_joint_mi(cov, 2) + 1e-9

    @pytest.mark.slow
    def test_dv_estimate_matches_the_additive_noise_oracle(self):
        law = RowLaw(law="gaussian", dim=2, mean=(0.0, 0.0))
        samples = simulate_slice_samples(
            law, lambda db, rng: db[0] + rng.normal(size=2), n=1, m=2000, seed=3
        )
        eye = np.eye(2)
        cov = np.block([[eye, eye], [eye, 2 * eye]])
        expected, _ = smi_gaussian_oracle(cov, 2, 2)
        estimate = smi_mc(samples, 0, p=64, seed=3)
        assert estimate.value == pytest.approx(expected, abs=0.05)


class TestSimulation:
    def test_shapes(self, leaky_samples):
        s = leaky_samples
        assert (s.n, s.m, s.k, s.d) == (3, 2000, 1, 1)
        assert leaky_samples.z.shape == (3, 2000, 2)
        x, y, z = leaky_samples.record(1)
        np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(z[:, 0], leaky_samples.x[0, :, 0])

    def test_black_box_mechanism(self, standard_row_law):
        box = BlackBox(sampler=lambda db, rng: db.sum(), seed=0)
        samples = simulate_slice_samples(standard_row_law, box, n=2, m=10, seed=0)
        np.testing.assert_allclose(samples.y[0, :, 0], samples.x[0, :, 0] + samples.x[1, :, 0])

    def test_seeded(self, standard_row_law):
        first = simulate_slice_samples(standard_row_law, lambda db, rng: db[0], n=2, m=5, seed=1)
        second = simulate_slice_samples(standard_row_law, lambda db, rng: db[0], n=2, m=5, seed=1)
        np.testing.assert_array_equal(first.x, second.x)

    def test_record_range(self, leaky_samples):
        with pytest.raises(ValidationError):
            leaky_samples.record(3)

    @pytest.mark.parametrize(
        "shapes",
        [((1, 1, 1), (1, 1, 1), (1, 1, 0)), ((2, 5, 1), (2, 5, 1), (2, 5, 2))],
    )
    def test_invalid_sample_sets(self, shapes):
        x, y, z = (np.zeros(s) for s in shapes)
        with pytest.raises(ValidationError):
            SliceSampleSet.from_arrays(x, y, z)
