"""Tests for budget accounting, UC composition and kernel combinators."""

import math

import numpy as np
import pytest

from pufferkit.composition import (
    BudgetConfig,
    PrivacyBudget,
    budget_from_config,
    check_uc,
    compose,
    compose_report,
    compose_uc,
    exact_eta,
    mixture,
    post_process,
    product_kernel,
)
from pufferkit.core import DataFunction, DiscreteFinite, PPFramework, ProductGaussian
from pufferkit.infotheory import AdditiveNoise, DiscreteKernel, exhaustive_mechanism_mi
from pufferkit.models import (
    CapabilityError,
    CompositionError,
    ConfigError,
    NoiseSpec,
    ValidationError,
)
from pufferkit.relations import eta_cardinality_bound
from pufferkit.sampling import stream

pytestmark = pytest.mark.unit


@pytest.fixture
def budget() -> PrivacyBudget:
    return PrivacyBudget().add("count", 0.3).add("mean", 0.2)


class TestCompose:
    def test_adaptive_sums(self, budget):
        assert compose(budget) == pytest.approx(0.5)
        assert [e.mechanism_id for e in budget.entries] == ["count", "mean"]

    def test_adaptive_rejects_overhead(self, budget):
        with pytest.raises(CompositionError):
            compose(budget.model_copy(update={"eta": 0.1}))

    def test_nonadaptive_needs_provenance(self, budget):
        nonadaptive = budget.model_copy(update={"mode": "nonadaptive", "eta": 0.1})
        with pytest.raises(CompositionError):
            compose(nonadaptive)
        sourced = nonadaptive.model_copy(update={"eta_provenance": "user"})
        assert compose(sourced) == pytest.approx(0.6)

    def test_report(self, budget):
        summary = compose_report(budget).summary()
        assert summary["total"] == pytest.approx(0.5)
        assert summary["mode"] == "adaptive"
        assert summary["entries"][0] == {"mechanism_id": "count", "eps": 0.3}

    def test_add_keeps_the_original(self, budget):
        longer = budget.add("hist", 1.0)
        assert len(budget.entries) == 2
        assert longer.total_eps == pytest.approx(1.5)


class TestUniversalComposability:
    def test_point_masses_are_uc(self, binary_row_framework):
        theta = DiscreteFinite.point_masses([0.0, 1.0], 2, 1)
        assert check_uc(theta, binary_row_framework.graph) == [True] * 4

    def test_dp_secrets_pin_the_database(self, binary_dp_framework):
        assert check_uc(binary_dp_framework.theta, binary_dp_framework.graph) == [True]

    def test_hidden_row_breaks_uc(self, binary_row_framework):
        assert check_uc(binary_row_framework.theta, binary_row_framework.graph) == [False]

    def test_compose_under_condition_one(self, budget, binary_dp_framework):
        result = compose_uc(budget, binary_dp_framework.theta, binary_dp_framework.graph)
        assert result.total == pytest.approx(0.5)
        assert result.eta == 0.0
        assert result.eta_provenance == "exact-zero-UC"
        assert result.condition.startswith("(i)")

    def test_compose_under_condition_two(self, budget, binary_row_framework):
        fw = binary_row_framework
        with pytest.raises(CompositionError):
            compose_uc(budget, fw.theta, fw.graph)
        result = compose_uc(budget, fw.theta, fw.graph, each_satisfies_standard_pp=True)
        assert result.condition.startswith("(ii)")

    def test_continuous_family(self, budget, binary_row_framework):
        theta = ProductGaussian(m=0.0, s=1.0, n=2, k=1)
        with pytest.raises(CapabilityError):
            compose_uc(budget, theta, binary_row_framework.graph)
        result = compose_uc(
            budget, theta, binary_row_framework.graph, each_satisfies_standard_pp=True
        )
        assert result.total == pytest.approx(0.5)


class TestExactEta:
    def test_repeated_release_of_the_hidden_row(self, binary_row_framework):
        support = binary_row_framework.theta.support()
        kernels = [DiscreteKernel.identity(support)] * 2
        # the second copy reveals all of x1 given x0
        assert exact_eta(binary_row_framework, kernels) == pytest.approx(math.log(2))
        assert exact_eta(binary_row_framework, kernels) <= eta_cardinality_bound([4, 4])

    def test_single_mechanism_has_no_overhead(self, binary_row_framework):
        support = binary_row_framework.theta.support()
        assert exact_eta(binary_row_framework, [DiscreteKernel.identity(support)]) == 0.0

    def test_vanishes_when_secrets_pin_the_database(self, binary_dp_framework):
        support = binary_dp_framework.theta.support()
        kernels = [
            DiscreteKernel.identity(support),
            DiscreteKernel.randomized_response(support, 0.2),
        ]
        assert exact_eta(binary_dp_framework, kernels) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.slow
    def test_joint_leakage_within_components_plus_overhead(
        self, binary_dp_framework, binary_row_framework
    ):
        rng = stream(41)
        graphs = [binary_dp_framework.graph, binary_row_framework.graph]
        outputs = tuple((float(y),) for y in range(3))
        for trial in range(50):
            pmfs = rng.dirichlet(np.ones(4), size=int(rng.integers(1, 4)))
            theta = DiscreteFinite(alphabet=(0.0, 1.0), n=2, k=1, pmfs=pmfs)
            fw = PPFramework(graph=graphs[trial % 2], theta=theta, n=2, k=1)
            support = theta.support()
            kernels = [
                DiscreteKernel(support=support, outputs=outputs, table=rng.dirichlet(np.ones(3), 4))
                for _ in range(2)
            ]
            eta = exact_eta(fw, kernels)
            joint = exhaustive_mechanism_mi(fw, product_kernel(kernels))
            parts = sum(exhaustive_mechanism_mi(fw, k) for k in kernels)
            assert joint <= parts + eta + 1e-9
            if all(check_uc(theta, fw.graph)):
                assert eta <= 1e-12


class TestCombinators:
    def test_mixture_of_flips(self, single_bit_framework):
        support = single_bit_framework.theta.support()
        mixed = mixture(
            [
                DiscreteKernel.randomized_response(support, 0.1),
                DiscreteKernel.randomized_response(support, 0.3),
            ],
            [0.5, 0.5],
        )
        expected = DiscreteKernel.randomized_response(support, 0.2)
        np.testing.assert_allclose(mixed.table, expected.table)

    def test_mixture_aligns_outputs(self, single_bit_framework):
        support = single_bit_framework.theta.support()
        left = DiscreteKernel.deterministic(support, lambda x: 5.0)
        right = DiscreteKernel.deterministic(support, lambda x: 7.0)
        mixed = mixture([left, right], [0.25, 0.75])
        assert mixed.outputs == ((5.0,), (7.0,))
        np.testing.assert_allclose(mixed.table, [[0.25, 0.75], [0.25, 0.75]])

    def test_mixture_weights(self, single_bit_framework):
        rr = DiscreteKernel.randomized_response(single_bit_framework.theta.support(), 0.1)
        with pytest.raises(ValidationError):
            mixture([rr, rr], [0.5, 0.6])
        with pytest.raises(ValidationError):
            mixture([rr], [0.5, 0.5])

    def test_post_processing_with_a_channel(self, single_bit_framework):
        support = single_bit_framework.theta.support()
        rr = DiscreteKernel.randomized_response(support, 0.1)
        flipped = post_process(rr, np.array([[0.9, 0.1], [0.1, 0.9]]))
        # two independent flips compose to 0.9 * 0.1 + 0.1 * 0.9
        np.testing.assert_allclose(flipped.table[0], [0.82, 0.18])
        mi = exhaustive_mechanism_mi(single_bit_framework, flipped)
        assert mi <= exhaustive_mechanism_mi(single_bit_framework, rr)

    def test_post_processing_with_a_map(self, binary_row_framework):
        support = binary_row_framework.theta.support()
        summed = post_process(DiscreteKernel.identity(support), lambda y: sum(y))
        assert summed.outputs == ((0.0,), (1.0,), (2.0,))
        np.testing.assert_array_equal(summed.table.argmax(axis=1), [0, 1, 1, 2])

    def test_bad_channel(self, single_bit_framework):
        rr = DiscreteKernel.randomized_response(single_bit_framework.theta.support(), 0.1)
        with pytest.raises(ValidationError):
            post_process(rr, np.array([[1.0, 0.0]]))
        with pytest.raises(ValidationError):
            post_process(rr, np.array([[0.5, 0.6], [0.5, 0.5]]))

    def test_product(self, single_bit_framework):
        support = single_bit_framework.theta.support()
        joint = product_kernel(
            [DiscreteKernel.identity(support), DiscreteKernel.constant(support, [0.5, 0.5])]
        )
        assert joint.outputs == ((0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0))
        np.testing.assert_allclose(joint.table, [[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]])

    def test_product_needs_kernels(self):
        with pytest.raises(ValidationError):
            product_kernel([])

    def test_combinators_need_discrete_kernels(self):
        f = DataFunction.row_selector(0, 1, 1)
        noisy = AdditiveNoise(f=f, noise=NoiseSpec(family="gaussian", scale=1.0, dim=1))
        with pytest.raises(CapabilityError):
            post_process(noisy, np.eye(2))


class TestBudgetConfig:
    def test_adaptive(self):
        entries = [{"id": "a", "eps": 0.5}, {"id": "b", "eps": 1.0}]
        budget = budget_from_config({"entries": entries})
        assert compose(budget) == pytest.approx(1.5)

    def test_cardinality_source(self):
        budget = budget_from_config(
            {"mode": "nonadaptive", "entries": [{"id": "a", "eps": 0.5}], "supp_sizes": [2, 3]}
        )
        assert budget.eta_provenance == "cardinality-bound"
        assert compose(budget) == pytest.approx(0.5 + math.log(6))

    def test_user_eta(self):
        budget = budget_from_config({"mode": "nonadaptive", "eta": 0.25})
        assert budget.eta_provenance == "user"

    def test_uc_mode_composes_adaptively(self):
        assert budget_from_config({"mode": "uc"}).mode == "adaptive"

    def test_one_eta_source(self):
        with pytest.raises(ConfigError):
            budget_from_config({"eta": 0.1, "supp_sizes": [2]})

    def test_invalid_budget(self):
        with pytest.raises(ValidationError):
            budget_from_config(BudgetConfig(entries=[{"id": "a", "eps": -1.0}]))
