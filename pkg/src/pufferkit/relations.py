"""Privacy-currency conversions, overhead bounds and utility bounds."""

import logging
import math
from collections.abc import Sequence

from .models import (
    CapabilityError,
    ConversionResult,
    DensityBoundSummary,
    ParameterRangeError,
    ValidationError,
)

logger = logging.getLogger(__name__)

ALL_DISTRIBUTIONS = "theta = all distributions on the database space"
FINITE_CARDINALITY = "finite mechanism support or finite private image"
DENSITY_BOUNDS = "joint densities bounded above and away from zero"


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParameterRangeError(message)


def binary_entropy(p: float) -> float:
    """h_b(p) in nats, with p clamped to [0, 1] and 0 log 0 = 0."""
    p = min(1.0, max(0.0, p))
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log(p) - (1 - p) * math.log1p(-p)


def pp_to_mipp(eps: float) -> float:
    """eps-PP implies min(eps, eps^2/2)-MI PP."""
    _require(eps > 0, f"eps must be positive, got {eps}")
    return min(eps, 0.5 * eps * eps)


def mipp_to_approx_pp(eps2: float, eps_prime: float = 0.0) -> ConversionResult:
    """eps2-MI PP implies (eps', sqrt(2 eps2))-PP when theta holds every distribution."""
    _require(eps2 >= 0 and eps_prime >= 0, "eps2 and eps' must be non-negative")
    delta = math.sqrt(2 * eps2)
    vacuous = delta >= 1.0
    if vacuous:
        logger.warning(f"Conversion of {eps2}-MI PP gives delta={delta:.6g} >= 1 (vacuous)")
    return ConversionResult(
        input_notion="mipp",
        output_notion="approx-pp",
        params_in=(eps2,),
        params_out=(eps_prime, delta),
        assumptions=(ALL_DISTRIBUTIONS,),
        vacuous=vacuous,
    )


def delta_prime(eps: float, delta: float) -> float:
    """delta' = 1 - 2(1 - delta)/(e^eps + 1), in [0, 1]."""
    _require(eps >= 0, f"eps must be non-negative, got {eps}")
    _require(0.0 <= delta <= 1.0, f"delta must lie in [0, 1], got {delta}")
    if math.isinf(eps):
        return 1.0
    shrink = math.exp(-eps)
    return min(1.0, max(0.0, 1.0 - 2.0 * (1.0 - delta) * shrink / (1.0 + shrink)))


def approx_pp_to_mipp_finite(
    eps: float,
    delta: float,
    supp_m: int | None = None,
    max_im_g: int | None = None,
) -> float:
    """(eps, delta)-PP implies eps*-MI PP when the support or the private image is finite."""
    if supp_m is None and max_im_g is None:
        raise CapabilityError(
            "The finite-cardinality conversion needs |supp M| or a declared finite image of g"
        )
    candidates = []
    if supp_m is not None:
        _require(supp_m >= 1, f"Support size must be >= 1, got {supp_m}")
        candidates.append(supp_m)
    if max_im_g is not None:
        _require(max_im_g >= 1, f"Image size must be >= 1, got {max_im_g}")
        candidates.append(max_im_g + 1)
    dp = delta_prime(eps, delta)
    return 2 * binary_entropy(dp) + 2 * dp * math.log(min(candidates))


def _log_ratio_term(alpha: float) -> float:
    """log(1/alpha)/(1 - alpha), continued by its limit 1 at alpha = 1."""
    if math.isclose(alpha, 1.0, rel_tol=0.0, abs_tol=1e-12):
        return 1.0
    return -math.log(alpha) / (1.0 - alpha)


def approx_pp_to_mipp_density(eps: float, delta: float, bounds: DensityBoundSummary) -> float:
    """(eps, delta)-PP implies eps*-MI PP under likelihood-ratio and density bounds.

    The triple branch is 1/2 (log(1/alpha)/(1 - alpha) - beta) as displayed; the
    pair branch is log(u/l). Either branch alone suffices, so the smaller is used.
    """
    if not bounds.triples and not bounds.pairs:
        raise ValidationError("Density conversion needs at least one triple or pair bound")
    triple_branch = max(
        (0.5 * (_log_ratio_term(t.alpha) - t.beta) for t in bounds.triples),
        default=math.inf,
    )
    pair_branch = max((math.log(p.upper / p.lower) for p in bounds.pairs), default=math.inf)
    dp = delta_prime(eps, delta)
    if dp == 0.0:
        return 0.0
    return max(0.0, dp * min(triple_branch, pair_branch))


def eta_cardinality_bound(supp_sizes: Sequence[int]) -> float:
    """Sum of log |supp M_i| over the mechanisms after the first."""
    for size in supp_sizes:
        _require(size >= 1, f"Support sizes must be >= 1, got {size}")
    return float(sum(math.log(size) for size in supp_sizes))


def logconcave_eta_term(var_given_secret: float, var_given_data: float) -> float:
    """log(pi e Var(M_i | g, w) / (4 Var(M_i | X)))."""
    _require(
        var_given_secret > 0 and var_given_data > 0,
        "Both conditional variances must be positive",
    )
    return math.log(math.pi * math.e * var_given_secret / (4 * var_given_data))


def eta_logconcave_bound(var_ratios: Sequence[float]) -> float:
    """1/2 sum of the log-concave entropy terms, floored at 0."""
    return max(0.0, 0.5 * float(sum(var_ratios)))


def cmi_bound(eps: float, n: int) -> float:
    """Conditional mutual information of an eps-MI DP algorithm on n records."""
    _require(eps >= 0, f"eps must be non-negative, got {eps}")
    _require(n >= 0, f"n must be non-negative, got {n}")
    return eps * n


def mi_stability(cond_mis: Sequence[float]) -> tuple[float, float]:
    """Average per-record I(X_i; A(X) | X_-i) and the CMI bound it implies."""
    if not cond_mis:
        raise ValidationError("Need at least one per-record value")
    level = float(sum(cond_mis)) / len(cond_mis)
    return level, cmi_bound(level, len(cond_mis))


def utility_upper_bound(h_f_given_g: float, eps: float) -> float:
    """H(f|g) + eps."""
    _require(eps >= 0, f"eps must be non-negative, got {eps}")
    return h_f_given_g + eps


def utility_lower_bound(
    h_f_given_g: float,
    h_g_given_f: float,
    i_gf: float,
    h_g: float,
    eps: float,
) -> float:
    """max(L1, L2) for 0 <= eps < I(g; f)."""
    _require(eps >= 0, f"eps must be non-negative, got {eps}")
    _require(eps < i_gf, f"Lower bound needs eps < I(g; f) = {i_gf}, got {eps}")
    _require(h_g > 0, "H(g) must be positive")
    alpha = eps / h_g
    first = h_f_given_g - h_g_given_f + eps
    second = (
        h_f_given_g
        - alpha * h_g_given_f
        + eps
        - (1 - alpha) * (math.log(i_gf + 1) + 4)
    )
    return max(first, second)


def gaussian_free_privacy_threshold(eps: float) -> float:
    """Largest conditional correlation rho(f, g | w) for which sigma^2 = 0 suffices."""
    _require(eps > 0, f"eps must be positive, got {eps}")
    return math.sqrt(-math.expm1(-2 * eps))


# Classic calibrations for comparison


def classic_laplace_scale(delta1: float, eps: float, delta: float = 0.0) -> float:
    """Laplace scale for (eps, delta)-DP: D1/eps, or D1/(eps - log(1 - delta))."""
    _require(delta1 >= 0 and eps > 0, "Need sensitivity >= 0 and eps > 0")
    _require(0.0 <= delta < 1.0, f"delta must lie in [0, 1), got {delta}")
    return delta1 / (eps - math.log1p(-delta))


def classic_gaussian_sigma2(delta2: float, eps: float, delta: float) -> float:
    """2 log(1.25/delta) D2^2 / eps^2."""
    _require(delta2 >= 0 and eps > 0, "Need sensitivity >= 0 and eps > 0")
    _require(0.0 < delta < 1.0, f"delta must lie in (0, 1), got {delta}")
    return 2 * math.log(1.25 / delta) * delta2**2 / eps**2


def mi_gaussian_beats_classic(eps: float, eps_prime: float) -> bool:
    """Whether eps-MI calibration needs less noise than classic (eps', sqrt(2 eps))-DP."""
    _require(eps > 0 and eps_prime > 0, "eps and eps' must be positive")
    delta = math.sqrt(2 * eps)
    _require(delta < 1.0, f"Implied delta {delta:.6g} must be below 1")
    threshold = 2 * math.sqrt(math.expm1(2 * eps) * math.log(1.25 / delta))
    return eps_prime < threshold


# Dispatcher


def convert(
    source: str,
    target: str,
    eps: float,
    delta: float = 0.0,
    eps_prime: float = 0.0,
    supp_m: int | None = None,
    max_im_g: int | None = None,
    bounds: DensityBoundSummary | None = None,
) -> ConversionResult:
    """Convert between eps-PP/DP, eps-MI PP/DP and (eps, delta)-PP."""
    pair = (source.lower(), target.lower())
    if pair in (("pp", "mipp"), ("dp", "mi-dp")):
        return ConversionResult(
            input_notion=source,
            output_notion=target,
            params_in=(eps,),
            params_out=(pp_to_mipp(eps),),
        )
    if pair in (("mipp", "approx-pp"), ("mi-dp", "approx-dp")):
        result = mipp_to_approx_pp(eps, eps_prime)
        return result.model_copy(update={"input_notion": source, "output_notion": target})
    if pair in (("approx-pp", "mipp"), ("approx-dp", "mi-dp")):
        if bounds is not None:
            value = approx_pp_to_mipp_density(eps, delta, bounds)
            assumption = DENSITY_BOUNDS
        else:
            value = approx_pp_to_mipp_finite(eps, delta, supp_m, max_im_g)
            assumption = FINITE_CARDINALITY
        return ConversionResult(
            input_notion=source,
            output_notion=target,
            params_in=(eps, delta),
            params_out=(value,),
            assumptions=(assumption,),
        )
    raise ValidationError(f"No conversion from {source!r} to {target!r}")
