"""Noise calibration and sampling for additive-noise mechanisms.

Every calibration takes the supremum of its bound over the family members and
the public functions (or edges) of the framework. Closed forms are used where
the member allows them; otherwise the bound is estimated by nested Monte Carlo
and inflated by two standard errors before the noise level is set.
"""

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np

from .core import (
    DataFunction,
    Database,
    FamilyMember,
    GaussianMember,
    PPFramework,
    ProductGaussian,
    SampledMember,
    evaluate_query,
)
from .infotheory import (
    MonteCarloConfig,
    conditional_covariance,
    conditional_groups,
    conditional_spectrum,
    conditional_variance,
    gaussian_conditional_entropy,
    mc_conditional_spectrum,
    mc_conditional_variance,
)
from .models import (
    CalibrationReport,
    CapabilityError,
    ConditionalVarianceEstimate,
    NoiseSpec,
    ParameterRangeError,
    RandomProjectionSpec,
    ValidationError,
)
from .sampling import (
    NOISE_TAG,
    gaussian_noise,
    gaussian_projection_matrix,
    laplace_noise,
    stream,
)

logger = logging.getLogger(__name__)

BOX_VERTEX_LIMIT = 16
INFLATION = 2.0

EntropyLowerBound = float | Callable[
    [FamilyMember, DataFunction, DataFunction, DataFunction], float
]


def _check_eps(eps: float) -> None:
    if not (eps > 0 and math.isfinite(eps)):
        raise ParameterRangeError(f"eps must be positive and finite, got {eps}")


def _report(
    method: str,
    family: Literal["laplace", "gaussian"],
    raw: float,
    inflated: float,
    stderr: float,
    dim: int,
    witness: str = "",
    projection: tuple[tuple[float, ...], ...] | RandomProjectionSpec | None = None,
    assumptions: tuple[str, ...] = (),
    sweep: dict[int, float] | None = None,
) -> CalibrationReport:
    raw, inflated = max(raw, 0.0), max(inflated, 0.0)
    noise = NoiseSpec(family=family, scale=inflated, dim=dim, projection=projection)
    free = inflated == 0.0
    if free:
        logger.info(f"{method}: bound is zero, any noise level is private (free regime)")
    else:
        logger.info(f"{method}: {family} scale {inflated:.6g} (raw {raw:.6g}, stderr {stderr:.3g})")
    return CalibrationReport(
        method=method,
        noise=noise,
        bound_raw=raw,
        bound_inflated=inflated,
        stderr=stderr,
        witness=witness,
        free_regime=free,
        assumptions=assumptions,
        sweep=sweep,
    )


def _moments(
    member: FamilyMember, f: DataFunction, w: DataFunction, mc: MonteCarloConfig
) -> ConditionalVarianceEstimate:
    if mc.prefer_exact and not isinstance(member, SampledMember):
        return conditional_variance(member, f, w)
    return mc_conditional_variance(member, f, w, mc.n_outer, mc.n_inner, mc.seed, mc.workers)


def _sup_moment(
    fw: PPFramework, f: DataFunction, mc: MonteCarloConfig, root: bool
) -> tuple[float, float, str]:
    """sup over members and W* of sum_j E[sqrt Var(f_j|w)] (root) or E[Var(f_j|w)]."""
    fw.check_query(f)
    best: tuple[float, float, str] | None = None
    for member in fw.members():
        for w in fw.graph.public_star():
            est = _moments(member, f, w, mc)
            if root:
                value, se = est.total_sd, est.total_sd_se
            else:
                value, se = est.total_var, est.total_var_se
            logger.debug(f"member {member.index}, {w.label}: moment {value:.6g} +- {se:.3g}")
            if best is None or value + INFLATION * se > best[0] + INFLATION * best[1]:
                best = (value, se, f"member={member.index}, public={w.label}")
    assert best is not None
    return best


def calibrate_laplace(
    fw: PPFramework, f: DataFunction, eps: float, mc: MonteCarloConfig | None = None
) -> CalibrationReport:
    """b = sup sum_j E[sqrt Var(f_j|w)] / (d (e^{eps/d} - 1))."""
    _check_eps(eps)
    mc = mc or MonteCarloConfig()
    value, se, witness = _sup_moment(fw, f, mc, root=True)
    d = f.output_dim
    denom = d * math.expm1(eps / d)
    return _report(
        "laplace",
        "laplace",
        value / denom,
        (value + INFLATION * se) / denom,
        se / denom,
        d,
        witness,
    )


def calibrate_gaussian(
    fw: PPFramework, f: DataFunction, eps: float, mc: MonteCarloConfig | None = None
) -> CalibrationReport:
    """sigma^2 = sup sum_j E[Var(f_j|w)] / (d (e^{2 eps/d} - 1))."""
    _check_eps(eps)
    mc = mc or MonteCarloConfig()
    value, se, witness = _sup_moment(fw, f, mc, root=False)
    d = f.output_dim
    denom = d * math.expm1(2 * eps / d)
    return _report(
        "gaussian",
        "gaussian",
        value / denom,
        (value + INFLATION * se) / denom,
        se / denom,
        d,
        witness,
    )


def calibrate_laplace_sensitivity(delta1: float, d: int, eps: float) -> CalibrationReport:
    """b = D1 / (sqrt(2) d (e^{eps/d} - 1))."""
    _check_eps(eps)
    if not (delta1 >= 0 and math.isfinite(delta1)) or d < 1:
        raise ParameterRangeError("Need a finite sensitivity >= 0 and d >= 1")
    b = delta1 / (math.sqrt(2) * d * math.expm1(eps / d))
    return _report("laplace-sensitivity", "laplace", b, b, 0.0, d, f"l1-sensitivity={delta1}")


def calibrate_gaussian_sensitivity(
    delta2: float, d: int, eps: float, compact_scalar: bool = False
) -> CalibrationReport:
    """sigma^2 = D2^2 / (2 d (e^{2 eps/d} - 1)).

    On a compact scalar domain the tighter D2^2 / (4 (e^{2 eps} - 1)) applies.
    """
    _check_eps(eps)
    if not (delta2 >= 0 and math.isfinite(delta2)) or d < 1:
        raise ParameterRangeError("Need a finite sensitivity >= 0 and d >= 1")
    if compact_scalar:
        if d != 1:
            raise ValidationError("The compact-domain bound applies to scalar queries only")
        sigma2 = delta2**2 / (4 * math.expm1(2 * eps))
        assumptions: tuple[str, ...] = ("scalar query on a compact domain (caller asserted)",)
    else:
        sigma2 = delta2**2 / (2 * d * math.expm1(2 * eps / d))
        assumptions = ()
    return _report(
        "gaussian-sensitivity",
        "gaussian",
        sigma2,
        sigma2,
        0.0,
        d,
        f"l2-sensitivity={delta2}",
        assumptions=assumptions,
    )


def random_projection_matrix(d: int, ell: int, seed: int) -> np.ndarray:
    """d x ell matrix with i.i.d. N(0, 1/d) entries."""
    if not 1 <= ell <= d:
        raise ValidationError(f"Projection dimension must satisfy 1 <= ell <= d={d}, got {ell}")
    return gaussian_projection_matrix(d, ell, seed)


def _box_mean_sup(f_mat: np.ndarray, bound: float) -> float:
    """max ||F mu||^2 over |mu_c| <= bound: vertex enumeration, else the triangle bound."""
    cells = f_mat.shape[1]
    if cells <= BOX_VERTEX_LIMIT:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=cells)))
        images = bound * signs @ f_mat.T
        return float((images**2).sum(axis=1).max())
    return float((bound * np.linalg.norm(f_mat, axis=0).sum()) ** 2)


def _sup_spectrum(
    fw: PPFramework, f: DataFunction, mc: MonteCarloConfig, with_mean: bool
) -> tuple[float, float, str]:
    """sup over members and W* of E||Cov(f|w)||_op (+ E||E[f|w]||^2)."""
    fw.check_query(f)
    best: tuple[float, float, str] | None = None
    for member in fw.members():
        for w in fw.graph.public_star():
            if mc.prefer_exact and not isinstance(member, SampledMember):
                op, mean_sq = conditional_spectrum(member, f, w)
                op_se = mean_se = 0.0
                if isinstance(fw.theta, ProductGaussian) and isinstance(member, GaussianMember):
                    center = f.matrix() @ np.asarray(member.mean)
                    mean_sq += _box_mean_sup(f.matrix(), fw.theta.m) - float(center @ center)
            else:
                op, op_se, mean_sq, mean_se = mc_conditional_spectrum(
                    member, f, w, mc.n_outer, mc.n_inner, mc.seed, mc.workers
                )
            value = op + mean_sq if with_mean else op
            se = math.hypot(op_se, mean_se) if with_mean else op_se
            if best is None or value + INFLATION * se > best[0] + INFLATION * best[1]:
                best = (value, se, f"member={member.index}, public={w.label}")
    assert best is not None
    return best


def projection_sweep(
    fw: PPFramework,
    f: DataFunction,
    eps: float,
    ells: Sequence[int],
    mc: MonteCarloConfig | None = None,
) -> dict[int, float]:
    """Random-projection sigma^2 as a function of the projection dimension."""
    _check_eps(eps)
    mc = mc or MonteCarloConfig()
    d = f.output_dim
    value, se, _ = _sup_spectrum(fw, f, mc, with_mean=True)
    sweep = {}
    for ell in ells:
        if not 1 <= ell <= d:
            raise ValidationError(f"Projection dimension must satisfy 1 <= ell <= d={d}, got {ell}")
        sweep[int(ell)] = (value + INFLATION * se) / math.expm1(2 * eps / ell)
    return sweep


def calibrate_gaussian_projection(
    fw: PPFramework,
    f: DataFunction,
    eps: float,
    proj: np.ndarray | RandomProjectionSpec,
    mc: MonteCarloConfig | None = None,
    sweep: Sequence[int] | None = None,
) -> CalibrationReport:
    """sigma^2 for the release A^T f(x) + Z.

    A deterministic d x ell matrix uses E||Cov(f|w)||_op max_j ||phi_j||^2; a
    random specification (entries N(0, 1/d)) uses E[||Cov(f|w)||_op + ||E[f|w]||^2];
    both are divided by e^{2 eps/ell} - 1.
    """
    _check_eps(eps)
    mc = mc or MonteCarloConfig()
    d = f.output_dim
    if isinstance(proj, RandomProjectionSpec):
        ell = proj.ell
        if ell > d:
            raise ValidationError(f"Projection dimension {ell} exceeds d={d}")
        value, se, witness = _sup_spectrum(fw, f, mc, with_mean=True)
        scale = 1.0
        projection: tuple[tuple[float, ...], ...] | RandomProjectionSpec = proj
        method = "gaussian-projection-random"
    else:
        mat = np.atleast_2d(np.asarray(proj, dtype=float))
        if mat.shape[0] != d or not 1 <= mat.shape[1] <= d:
            raise ValidationError(f"Projection must be d x ell with ell <= d={d}, got {mat.shape}")
        ell = mat.shape[1]
        value, se, witness = _sup_spectrum(fw, f, mc, with_mean=False)
        scale = float((mat**2).sum(axis=0).max())
        projection = tuple(tuple(float(v) for v in row) for row in mat)
        method = "gaussian-projection"
    denom = math.expm1(2 * eps / ell)
    return _report(
        method,
        "gaussian",
        value * scale / denom,
        (value + INFLATION * se) * scale / denom,
        se * scale / denom,
        d,
        witness,
        projection=projection,
        sweep=projection_sweep(fw, f, eps, sweep, mc) if sweep else None,
    )


def _stacked(g: DataFunction, w: DataFunction) -> DataFunction:
    return DataFunction.linear(np.vstack([g.matrix(), w.matrix()]), g.n, g.k, name="(g,w)")


def _gaussian_entropy_given_secret(
    member: FamilyMember, f: DataFunction, g: DataFunction, w: DataFunction
) -> float:
    if not isinstance(member, GaussianMember):
        raise CapabilityError(
            "h(f | g, w) has a closed form for Gaussian members only; pass cond_entropy_lb"
        )
    return gaussian_conditional_entropy(conditional_covariance(member, f, _stacked(g, w)))


def calibrate_gaussian_entropy_law(
    fw: PPFramework,
    f: DataFunction,
    eps: float,
    cond_entropy_lb: EntropyLowerBound | None = None,
    mc: MonteCarloConfig | None = None,
) -> CalibrationReport:
    """sigma^2 = sup over edges of (A - d e^{2 eps/d} B) / (d (e^{2 eps/d} - 1)), floored at 0.

    A = sum_j E[Var(f_j|w)] and B = exp((2/d) h(f|g,w) - 1) / (2 pi), where h may
    be replaced by any lower bound. Without one, h is the Gaussian closed form.
    """
    _check_eps(eps)
    fw.check_query(f)
    mc = mc or MonteCarloConfig()
    d = f.output_dim
    growth = math.exp(2 * eps / d)
    denom = d * math.expm1(2 * eps / d)

    best: tuple[float, float, str] | None = None
    for member in fw.members():
        for g, w in fw.graph.secret_pairs():
            if cond_entropy_lb is None:
                h = _gaussian_entropy_given_secret(member, f, g, w)
            elif callable(cond_entropy_lb):
                h = cond_entropy_lb(member, f, g, w)
            else:
                h = float(cond_entropy_lb)
            if h == -math.inf or math.isnan(h):
                raise ParameterRangeError(
                    f"h(f | {g.label}, {w.label}) must exceed -inf; use calibrate_gaussian instead"
                )
            est = _moments(member, f, w, mc)
            entropy_power = math.exp(2 * h / d - 1) / (2 * math.pi)
            value = (est.total_var - d * growth * entropy_power) / denom
            se = est.total_var_se / denom
            logger.debug(f"member {member.index}, ({g.label}, {w.label}): bound {value:.6g}")
            if best is None or value + INFLATION * se > best[0] + INFLATION * best[1]:
                best = (value, se, f"member={member.index}, edge=({g.label}, {w.label})")
    assert best is not None
    value, se, witness = best
    return _report(
        "gaussian-entropy-law",
        "gaussian",
        value,
        value + INFLATION * se,
        se,
        d,
        witness,
    )


def _secret_variance_floor(member: FamilyMember, f: DataFunction, g: DataFunction) -> float:
    """min over a of Var(f | g = a)."""
    if isinstance(member, GaussianMember):
        return float(conditional_covariance(member, f, g)[0, 0])
    if isinstance(member, SampledMember):
        raise CapabilityError("Attribute calibration needs Gaussian or discrete members")
    return min(float(cov[0, 0]) for _, _, cov in conditional_groups(member, f, g))


def _marginal_variance(member: FamilyMember, f: DataFunction) -> float:
    return float(conditional_variance(member, f, DataFunction.constant(f.n, f.k)).total_var)


def calibrate_gaussian_ap(fw: PPFramework, f: DataFunction, eps: float) -> CalibrationReport:
    """sigma^2 = sup of (Var f - e^{2 eps} Var(f|g=a)) / (e^{2 eps} - 1), floored at 0.

    The sup runs over family members and private functions.

    Assumes Var(f | g = a) does not depend on a; the smallest value over a is used.
    """
    _check_eps(eps)
    fw.check_query(f)
    if fw.graph.edges:
        raise ValidationError("Attribute calibration needs a framework without public functions")
    if f.output_dim != 1:
        raise ValidationError(f"Attribute calibration needs a scalar query, got d={f.output_dim}")
    growth = math.exp(2 * eps)
    best: tuple[float, str] | None = None
    for member in fw.members():
        total = _marginal_variance(member, f)
        for g in fw.graph.privates:
            value = (total - growth * _secret_variance_floor(member, f, g)) / math.expm1(2 * eps)
            if best is None or value > best[0]:
                best = (value, f"member={member.index}, private={g.label}")
    assert best is not None
    return _report(
        "gaussian-ap",
        "gaussian",
        best[0],
        best[0],
        0.0,
        1,
        best[1],
        assumptions=("Var(f | g = a) constant in a (caller asserted)",),
    )


def classic_gaussian_ap_sigma2(
    var_f_given_a: float, delta_ap: float, eps: float, delta: float
) -> float:
    """[(C D_AP / eps)^2 - Var(f | g = a)] floored at 0, with C = sqrt(2 log(1.25/delta))."""
    _check_eps(eps)
    if not 0.0 < delta < 1.0:
        raise ParameterRangeError(f"delta must lie in (0, 1), got {delta}")
    c = math.sqrt(2 * math.log(1.25 / delta))
    return max(0.0, (c * delta_ap / eps) ** 2 - var_f_given_a)


def run_mechanism(f: DataFunction, x: Database, noise: NoiseSpec, seed: int) -> np.ndarray:
    """Release A^T f(x) + Z (A^T omitted without a projection)."""
    value = evaluate_query(f, x)
    if value.size != noise.dim:
        raise ValidationError(f"Noise dimension {noise.dim} != query dimension {value.size}")
    projection = noise.projection_matrix()
    if projection is not None:
        value = projection.T @ value
    if noise.scale == 0:
        return value
    rng = stream(seed, NOISE_TAG)
    if noise.family == "laplace":
        return value + laplace_noise(rng, noise.scale, value.size)
    return value + gaussian_noise(rng, noise.scale, value.size)


def laplace_noise_energy(b: float, d: int) -> float:
    """E||Z||^2 = 2 d b^2 for Laplace(b)^d."""
    return 2 * d * b * b


def gaussian_noise_energy(sigma2: float, d: int) -> float:
    """E||Z||^2 = d sigma^2."""
    return d * sigma2
