"""Tests for privacy-currency conversions and the bounds built on them."""

import math

import pytest

from pufferkit.models import (
    CapabilityError,
    DensityBoundSummary,
    PairBound,
    ParameterRangeError,
    TripleBound,
    ValidationError,
)
from pufferkit.relations import (
    approx_pp_to_mipp_density,
    approx_pp_to_mipp_finite,
    binary_entropy,
    classic_gaussian_sigma2,
    classic_laplace_scale,
    cmi_bound,
    convert,
    delta_prime,
    eta_cardinality_bound,
    eta_logconcave_bound,
    gaussian_free_privacy_threshold,
    logconcave_eta_term,
    mi_gaussian_beats_classic,
    mi_stability,
    mipp_to_approx_pp,
    pp_to_mipp,
    utility_lower_bound,
    utility_upper_bound,
)

pytestmark = pytest.mark.unit


def test_binary_entropy():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert math.isclose(binary_entropy(0.5), math.log(2))
    assert binary_entropy(-0.3) == 0.0


@pytest.mark.parametrize("eps,expected", [(1.0, 0.5), (0.5, 0.125), (3.0, 3.0), (2.0, 2.0)])
def test_pp_to_mipp(eps, expected):
    assert math.isclose(pp_to_mipp(eps), expected)


def test_pp_to_mipp_needs_positive_eps():
    with pytest.raises(ParameterRangeError):
        pp_to_mipp(0.0)


def test_mipp_to_approx_pp():
    result = mipp_to_approx_pp(0.02, eps_prime=0.3)
    assert result.params_out == pytest.approx((0.3, 0.2))
    assert not result.vacuous
    assert result.assumptions
    assert mipp_to_approx_pp(0.5).vacuous


def test_delta_prime():
    # 1 - 2 (1 - delta) / (e^eps + 1), about 0.515905 at (1, 0.1)
    assert math.isclose(delta_prime(1.0, 0.1), 1 - 1.8 / (math.e + 1), rel_tol=1e-12)
    assert delta_prime(0.0, 0.0) == 0.0
    assert delta_prime(math.inf, 0.0) == 1.0
    assert delta_prime(2.0, 1.0) == 1.0
    with pytest.raises(ParameterRangeError):
        delta_prime(1.0, 1.5)


class TestFiniteConversion:
    def test_needs_a_cardinality(self):
        with pytest.raises(CapabilityError):
            approx_pp_to_mipp_finite(1.0, 0.1)

    def test_uses_the_smaller_cardinality(self):
        dp = delta_prime(1.0, 0.1)
        expected = 2 * binary_entropy(dp) + 2 * dp * math.log(4)
        assert math.isclose(approx_pp_to_mipp_finite(1.0, 0.1, supp_m=4), expected)
        assert math.isclose(approx_pp_to_mipp_finite(1.0, 0.1, supp_m=100, max_im_g=3), expected)

    def test_zero_slack_is_free(self):
        assert approx_pp_to_mipp_finite(0.0, 0.0, supp_m=10) == 0.0


class TestDensityConversion:
    def test_takes_the_smaller_branch(self):
        bounds = DensityBoundSummary(
            triples=(TripleBound(alpha=0.5, beta=0.1),),
            pairs=(PairBound(upper=2.0, lower=1.0),),
        )
        triple = 0.5 * (math.log(2) / 0.5 - 0.1)
        expected = delta_prime(1.0, 0.1) * min(triple, math.log(2))
        assert math.isclose(approx_pp_to_mipp_density(1.0, 0.1, bounds), expected)

    def test_unit_ratio_uses_the_limit(self):
        bounds = DensityBoundSummary(triples=(TripleBound(alpha=1.0, beta=0.0),))
        expected = 0.5 * delta_prime(1.0, 0.1)
        assert math.isclose(approx_pp_to_mipp_density(1.0, 0.1, bounds), expected)

    def test_floored_at_zero(self):
        bounds = DensityBoundSummary(triples=(TripleBound(alpha=0.9, beta=5.0),))
        assert approx_pp_to_mipp_density(1.0, 0.1, bounds) == 0.0

    def test_needs_bounds(self):
        with pytest.raises(ValidationError):
            approx_pp_to_mipp_density(1.0, 0.1, DensityBoundSummary())

    def test_pair_bound_order(self):
        with pytest.raises(ValueError):
            PairBound(upper=1.0, lower=2.0)


def test_overhead_bounds():
    assert math.isclose(eta_cardinality_bound([2, 3]), math.log(6))
    term = math.log(math.pi * math.e / 4)
    assert math.isclose(logconcave_eta_term(1.0, 1.0), term)
    assert math.isclose(eta_logconcave_bound([term, term]), term)
    assert eta_logconcave_bound([-3.0]) == 0.0
    with pytest.raises(ParameterRangeError):
        logconcave_eta_term(0.0, 1.0)


def test_stability():
    assert cmi_bound(0.1, 50) == pytest.approx(5.0)
    level, cmi = mi_stability([0.1, 0.3])
    assert level == pytest.approx(0.2)
    assert cmi == pytest.approx(0.4)
    with pytest.raises(ValidationError):
        mi_stability([])


class TestUtilityBounds:
    def test_upper(self):
        assert utility_upper_bound(1.2, 0.3) == pytest.approx(1.5)

    def test_lower(self):
        h_fg, h_gf, i_gf, h_g, eps = 1.0, 0.5, 0.6, 1.1, 0.2
        alpha = eps / h_g
        first = h_fg - h_gf + eps
        second = h_fg - alpha * h_gf + eps - (1 - alpha) * (math.log(i_gf + 1) + 4)
        assert utility_lower_bound(h_fg, h_gf, i_gf, h_g, eps) == pytest.approx(max(first, second))

    def test_lower_needs_eps_below_information(self):
        with pytest.raises(ParameterRangeError):
            utility_lower_bound(1.0, 0.5, 0.6, 1.1, 0.6)


def test_free_privacy_threshold():
    assert math.isclose(gaussian_free_privacy_threshold(0.5), math.sqrt(1 - math.exp(-1.0)))
    assert gaussian_free_privacy_threshold(0.5) == pytest.approx(0.7950601, abs=1e-7)


def test_classic_calibrations():
    assert classic_laplace_scale(1.0, 0.5) == pytest.approx(2.0)
    assert classic_laplace_scale(1.0, 0.5, 0.1) == pytest.approx(1.0 / (0.5 - math.log(0.9)))
    assert classic_gaussian_sigma2(1.0, 1.0, 1e-5) == pytest.approx(2 * math.log(1.25e5))
    with pytest.raises(ParameterRangeError):
        classic_gaussian_sigma2(1.0, 1.0, 0.0)


def test_mi_gaussian_comparison():
    eps = 0.01
    threshold = 2 * math.sqrt(math.expm1(2 * eps) * math.log(1.25 / math.sqrt(2 * eps)))
    assert mi_gaussian_beats_classic(eps, 0.9 * threshold)
    assert not mi_gaussian_beats_classic(eps, 1.1 * threshold)
    with pytest.raises(ParameterRangeError):
        mi_gaussian_beats_classic(0.5, 1.0)


class TestConvert:
    def test_pure_to_mutual_information(self):
        result = convert("pp", "mipp", 1.0)
        assert result.params_out == (0.5,)
        assert convert("dp", "mi-dp", 0.5).params_out == (0.125,)

    def test_mutual_information_to_approximate(self):
        result = convert("mi-dp", "approx-dp", 0.02, eps_prime=0.1)
        assert result.output_notion == "approx-dp"
        assert result.params_out == pytest.approx((0.1, 0.2))

    def test_approximate_to_mutual_information(self):
        finite = convert("approx-pp", "mipp", 1.0, 0.1, supp_m=4)
        assert finite.params_out[0] == pytest.approx(approx_pp_to_mipp_finite(1.0, 0.1, 4))
        bounds = DensityBoundSummary(pairs=(PairBound(upper=3.0, lower=1.0),))
        dens = convert("approx-pp", "mipp", 1.0, 0.1, bounds=bounds)
        assert dens.params_out[0] == pytest.approx(delta_prime(1.0, 0.1) * math.log(3))

    def test_unknown_pair(self):
        with pytest.raises(ValidationError):
            convert("mipp", "pp", 1.0)
