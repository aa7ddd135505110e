"""Exact discrete information measures, Gaussian closed forms and the brute-force
conditional-MI oracle.

All quantities are in nats. The oracle enumerates a finite family member by
member and edge by edge, so it is exact on desk-scale instances and is what every
calibration and conversion in the package is checked against.
"""

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from typing import Any, Literal

import numpy as np
from pydantic import Field, field_validator, model_validator
from scipy import special, stats

from .config import settings
from .core import (
    DataFunction,
    DiscreteFinite,
    DiscreteMember,
    FamilyMember,
    FunctionKind,
    GaussianMember,
    PPFramework,
    SampledMember,
)
from .models import (
    CapabilityError,
    ConditionalVarianceEstimate,
    FrozenModel,
    NoiseSpec,
    OracleMIReport,
    ParameterRangeError,
    PPCheckResult,
    PPWitness,
    ValidationError,
    frozen_array,
)
from .sampling import (
    MC_TAG,
    NOISE_TAG,
    gaussian_noise,
    laplace_noise,
    seeded_map,
    standard_normal,
    stream,
)

logger = logging.getLogger(__name__)

PMF_TOLERANCE = 1e-12
MAX_EVENT_OUTPUTS = 20
ENTROPY_SUBSAMPLE = 4096


class JointPMF(FrozenModel):
    """Dense joint PMF over a product of finite alphabets."""

    axes: tuple[tuple[Any, ...], ...]
    probs: np.ndarray

    @field_validator("probs", mode="before")
    @classmethod
    def validate_probs(cls, v: Any) -> np.ndarray:
        arr = frozen_array(v)
        if np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > PMF_TOLERANCE:
            raise ValueError("Joint PMF must be non-negative and sum to 1")
        return arr

    @model_validator(mode="after")
    def validate_axes(self) -> "JointPMF":
        shape = tuple(len(a) for a in self.axes)
        if shape != self.probs.shape:
            raise ValueError(f"Axes {shape} disagree with probability tensor {self.probs.shape}")
        return self

    @classmethod
    def from_array(
        cls, probs: Any, axes: Sequence[Sequence[Any]] | None = None
    ) -> "JointPMF":
        """Wrap a probability tensor, renormalizing round-off and labelling axes by index."""
        arr = np.clip(np.asarray(probs, dtype=float), 0.0, None)
        total = float(arr.sum())
        if total <= 0 or abs(total - 1.0) > 1e-9:
            raise ValidationError(f"Probabilities sum to {total}, not 1")
        labels = (
            tuple(tuple(range(s)) for s in arr.shape)
            if axes is None
            else tuple(tuple(a) for a in axes)
        )
        return cls(axes=labels, probs=arr / total)

    @property
    def ndim(self) -> int:
        return self.probs.ndim

    def marginal(self, keep: Sequence[int]) -> "JointPMF":
        """Marginal over the axes in ``keep``, in that order."""
        keep = list(keep)
        if len(set(keep)) != len(keep) or any(not 0 <= a < self.ndim for a in keep):
            raise ValidationError(f"Invalid marginal axes {keep} for a {self.ndim}-axis PMF")
        dropped = tuple(a for a in range(self.ndim) if a not in keep)
        summed = self.probs.sum(axis=dropped) if dropped else np.array(self.probs)
        remaining = [a for a in range(self.ndim) if a in keep]
        order = [remaining.index(a) for a in keep]
        return JointPMF(
            axes=tuple(self.axes[a] for a in keep),
            probs=np.transpose(summed, order) if order else summed,
        )

    def entropy(self, axes: Sequence[int] | None = None) -> float:
        if axes is None:
            return discrete_entropy(self)
        if not axes:
            return 0.0
        return discrete_entropy(self.marginal(axes))


def _as_pmf(p: "JointPMF | Any") -> np.ndarray:
    if isinstance(p, JointPMF):
        return np.asarray(p.probs, dtype=float).reshape(-1)
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.size == 0 or np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > PMF_TOLERANCE:
        raise ValidationError("Not a PMF: entries must be non-negative and sum to 1")
    return arr


def discrete_entropy(p: "JointPMF | Any") -> float:
    """H(p) = -sum p log p with 0 log 0 = 0."""
    return max(0.0, float(special.entr(_as_pmf(p)).sum()))


def kl_divergence(p: "JointPMF | Any", q: "JointPMF | Any") -> float:
    """D(p || q); ``math.inf`` when p is not absolutely continuous w.r.t. q."""
    pa, qa = _as_pmf(p), _as_pmf(q)
    if pa.shape != qa.shape:
        raise ValidationError(f"Alphabet sizes differ: {pa.size} vs {qa.size}")
    terms = special.rel_entr(pa, qa)
    if np.any(np.isinf(terms)):
        logger.warning("KL divergence is infinite: p puts mass where q has none")
        return math.inf
    return max(0.0, float(terms.sum()))


def tv_distance(p: "JointPMF | Any", q: "JointPMF | Any") -> float:
    """Total variation distance, half the l1 distance."""
    pa, qa = _as_pmf(p), _as_pmf(q)
    if pa.shape != qa.shape:
        raise ValidationError(f"Alphabet sizes differ: {pa.size} vs {qa.size}")
    return min(1.0, 0.5 * float(np.abs(pa - qa).sum()))


def conditional_entropy(
    joint: JointPMF, target: Sequence[int], given: Sequence[int] = ()
) -> float:
    """H(target | given)."""
    return joint.entropy([*target, *given]) - joint.entropy(given)


def mutual_information(
    joint: JointPMF,
    a: Sequence[int],
    b: Sequence[int],
    given: Sequence[int] = (),
) -> float:
    """I(a; b | given) by the entropy expansion."""
    value = (
        joint.entropy([*a, *given])
        + joint.entropy([*b, *given])
        - joint.entropy([*a, *b, *given])
        - joint.entropy(given)
    )
    return max(0.0, value)


def discrete_conditional_mi(joint: JointPMF) -> float:
    """I(G; M | W) for a joint PMF over (G, M, W), from the KL definition."""
    if joint.ndim != 3:
        raise ValidationError(f"Expected a 3-axis PMF over (G, M, W), got {joint.ndim} axes")
    p = np.asarray(joint.probs)
    p_w = p.sum(axis=(0, 1))
    p_gw = p.sum(axis=1)
    p_mw = p.sum(axis=0)
    product = p_gw[:, None, :] * p_mw[None, :, :]
    reference = np.divide(
        product, p_w[None, None, :], out=np.zeros_like(product), where=p_w[None, None, :] > 0
    )
    return max(0.0, float(special.rel_entr(p, reference).sum()))


# Mechanism kernels


class DiscreteKernel(FrozenModel):
    """Conditional PMF table P(output | database) over an enumerated support."""

    variant: Literal["discrete"] = "discrete"
    support: np.ndarray
    outputs: tuple[tuple[float, ...], ...]
    table: np.ndarray
    name: str = ""

    @field_validator("support", "table", mode="before")
    @classmethod
    def validate_arrays(cls, v: Any) -> np.ndarray:
        return frozen_array(v)

    @model_validator(mode="after")
    def validate_rows(self) -> "DiscreteKernel":
        if self.support.ndim != 3:
            raise ValueError("Kernel support must be a stack of databases (S, n, k)")
        expected = (self.support.shape[0], len(self.outputs))
        if self.table.shape != expected:
            raise ValueError(f"Kernel table must be {expected}, got {self.table.shape}")
        if np.any(self.table < 0):
            raise ValueError("Kernel probabilities must be non-negative")
        if np.any(np.abs(self.table.sum(axis=1) - 1.0) > PMF_TOLERANCE):
            raise ValueError("Every kernel row must sum to 1")
        return self

    @property
    def output_size(self) -> int:
        return len(self.outputs)

    @classmethod
    def deterministic(
        cls,
        support: np.ndarray,
        fn: Callable[[np.ndarray], Any],
        name: str = "",
    ) -> "DiscreteKernel":
        """Kernel releasing ``fn(x)`` exactly."""
        values = np.array(
            [np.atleast_1d(np.asarray(fn(x), dtype=float)) for x in support]
        )
        labels, inverse = np.unique(values, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        table = np.zeros((len(values), len(labels)))
        table[np.arange(len(values)), inverse] = 1.0
        outputs = tuple(tuple(float(v) for v in row) for row in labels)
        return cls(support=support, outputs=outputs, table=table, name=name)

    @classmethod
    def identity(cls, support: np.ndarray) -> "DiscreteKernel":
        return cls.deterministic(support, np.ravel, name="identity")

    @classmethod
    def from_query(cls, support: np.ndarray, f: DataFunction) -> "DiscreteKernel":
        return cls.deterministic(
            support, lambda x: f.evaluate_many(x[np.newaxis])[0], name=f.label
        )

    @classmethod
    def constant(cls, support: np.ndarray, pmf: Sequence[float]) -> "DiscreteKernel":
        """Output drawn from ``pmf`` regardless of the database."""
        row = _as_pmf(pmf)
        outputs = tuple((float(y),) for y in range(row.size))
        table = np.tile(row, (support.shape[0], 1))
        return cls(support=support, outputs=outputs, table=table, name="constant")

    @classmethod
    def randomized_response(cls, support: np.ndarray, flip: float) -> "DiscreteKernel":
        """Each cell of a two-symbol grid database independently flipped w.p. ``flip``."""
        if not 0.0 <= flip <= 1.0:
            raise ParameterRangeError(f"Flip probability must lie in [0, 1], got {flip}")
        flat = support.reshape(support.shape[0], -1)
        if np.unique(flat).size > 2:
            raise ValidationError("Randomized response needs a two-symbol alphabet")
        mismatches = (flat[:, None, :] != flat[None, :, :]).sum(axis=-1)
        cells = flat.shape[1]
        table = flip**mismatches * (1.0 - flip) ** (cells - mismatches)
        outputs = tuple(tuple(float(v) for v in row) for row in flat)
        return cls(support=support, outputs=outputs, table=table, name=f"rr({flip:g})")


class AdditiveNoise(FrozenModel):
    """f(x) (optionally projected) plus Laplace or Gaussian noise."""

    variant: Literal["additive"] = "additive"
    f: DataFunction
    noise: NoiseSpec

    @model_validator(mode="after")
    def validate_dim(self) -> "AdditiveNoise":
        if self.noise.dim != self.f.output_dim:
            raise ValueError(
                f"Noise dimension {self.noise.dim} != query dimension {self.f.output_dim}"
            )
        return self


class BlackBox(FrozenModel):
    """Opaque seeded sampler ``sampler(x, rng) -> output vector``."""

    variant: Literal["blackbox"] = "blackbox"
    sampler: Callable[[np.ndarray, np.random.Generator], Any]
    seed: int = 0
    name: str = ""

    def sample(self, x: np.ndarray, count: int) -> np.ndarray:
        """``count`` independent releases on database ``x``, shape (count, d)."""
        rng = stream(self.seed, NOISE_TAG)
        return np.array(
            [np.atleast_1d(np.asarray(self.sampler(x, rng), dtype=float)) for _ in range(count)]
        )


MechanismKernel = DiscreteKernel | AdditiveNoise | BlackBox


def _noise_width(noise: NoiseSpec) -> float:
    """Laplace b or Gaussian standard deviation."""
    return noise.scale if noise.family == "laplace" else math.sqrt(noise.scale)


def _noise_law(noise: NoiseSpec) -> Any:
    width = _noise_width(noise)
    return stats.laplace(scale=width) if noise.family == "laplace" else stats.norm(scale=width)


def _binned_table(law: Any, centers: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """P(center + noise in each bin), with overflow bins at both ends."""
    cdf = law.cdf(edges[np.newaxis, :] - centers[:, np.newaxis])
    upper = law.sf(edges[-1] - centers)
    table = np.column_stack([cdf[:, 0], np.diff(cdf, axis=1), upper])
    table = np.clip(table, 0.0, None)
    return table / table.sum(axis=1, keepdims=True)


def discretize_additive(
    kernel: AdditiveNoise,
    support: np.ndarray,
    bins: int | None = None,
    span: float | None = None,
) -> tuple[DiscreteKernel, float]:
    """Quantize a scalar additive-noise mechanism onto a finite output grid.

    Bins are equal-width over [min f - span*w, max f + span*w] (w the noise
    width) with one overflow bin at each end. Quantization is post-processing,
    so oracle values of the result never exceed those of the continuous
    mechanism; the returned tolerance is the worst overflow mass.
    """
    bins = settings.GRID_BINS if bins is None else bins
    span = settings.GRID_SPAN if span is None else span
    if bins < 1 or span <= 0:
        raise ParameterRangeError(f"Need bins >= 1 and span > 0, got {bins}, {span}")

    values = kernel.f.evaluate_many(support)
    projection = kernel.noise.projection_matrix()
    if projection is not None:
        values = values @ projection
    if values.shape[1] != 1:
        raise CapabilityError(
            f"Exact discretization supports scalar releases only, got dimension {values.shape[1]}"
        )
    centers = values[:, 0]

    if kernel.noise.scale == 0:
        labels, inverse = np.unique(centers, return_inverse=True)
        table = np.zeros((len(centers), len(labels)))
        table[np.arange(len(centers)), np.asarray(inverse).reshape(-1)] = 1.0
        outputs = tuple((float(v),) for v in labels)
        return DiscreteKernel(support=support, outputs=outputs, table=table, name="exact"), 0.0

    width = _noise_width(kernel.noise)
    law = _noise_law(kernel.noise)
    edges = np.linspace(centers.min() - span * width, centers.max() + span * width, bins + 1)
    table = _binned_table(law, centers, edges)
    mids = (edges[:-1] + edges[1:]) / 2
    outputs = ((-math.inf,), *((float(m),) for m in mids), (math.inf,))
    tolerance = float(max(table[:, 0].max(), table[:, -1].max())) + PMF_TOLERANCE
    logger.debug(f"Discretized {kernel.f.label} on {bins} bins, overflow tolerance {tolerance:.3g}")
    return (
        DiscreteKernel(
            support=support, outputs=outputs, table=table, name=f"binned({kernel.f.label})"
        ),
        tolerance,
    )


# Oracles


def label_onehot(values: np.ndarray) -> tuple[tuple[tuple[float, ...], ...], np.ndarray]:
    labels, inverse = np.unique(values, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    onehot = np.zeros((values.shape[0], len(labels)))
    onehot[np.arange(values.shape[0]), inverse] = 1.0
    return tuple(tuple(float(v) for v in row) for row in labels), onehot


def induced_joint(
    member: DiscreteMember, g: DataFunction, w: DataFunction, kernel: DiscreteKernel
) -> JointPMF:
    """Joint law of (g(X), M(X), w(X)) under one family member."""
    g_labels, g_hot = label_onehot(g.evaluate_many(member.support))
    w_labels, w_hot = label_onehot(w.evaluate_many(member.support))
    probs = np.einsum("s,sa,sy,sc->ayc", member.pmf, g_hot, kernel.table, w_hot)
    return JointPMF.from_array(probs, axes=(g_labels, kernel.outputs, w_labels))


def oracle_kernel(
    fw: PPFramework,
    kernel: MechanismKernel,
    bins: int | None,
    span: float | None,
) -> tuple[DiscreteFinite, DiscreteKernel, float]:
    if not isinstance(fw.theta, DiscreteFinite):
        raise CapabilityError(
            f"The exhaustive oracle needs a finite discrete family, got {fw.theta.variant}"
        )
    support = fw.theta.support()
    if isinstance(kernel, DiscreteKernel):
        if kernel.support.shape != support.shape or not np.array_equal(kernel.support, support):
            raise ValidationError("Kernel support does not match the family's database grid")
        return fw.theta, kernel, 0.0
    if isinstance(kernel, AdditiveNoise):
        fw.check_query(kernel.f)
        table, tolerance = discretize_additive(kernel, support, bins, span)
        return fw.theta, table, tolerance
    raise CapabilityError("Black-box mechanisms have no enumerable kernel")


def mechanism_mi_profile(
    fw: PPFramework,
    kernel: MechanismKernel,
    bins: int | None = None,
    span: float | None = None,
) -> OracleMIReport:
    """I(g; M | w) for every family member and edge, with the attaining pair."""
    theta, table, tolerance = oracle_kernel(fw, kernel, bins, span)
    pairs = fw.graph.secret_pairs()
    per_edge = tuple(
        tuple(discrete_conditional_mi(induced_joint(member, g, w, table)) for g, w in pairs)
        for member in theta.members()
    )
    grid = np.array(per_edge)
    member, edge = np.unravel_index(int(np.argmax(grid)), grid.shape)
    logger.debug(
        f"Oracle MI {grid.max():.6g} at member {member}, edge {edge} "
        f"over {grid.shape[0]} members x {grid.shape[1]} edges"
    )
    return OracleMIReport(
        value=float(grid.max()),
        member=int(member),
        edge=int(edge),
        per_edge=per_edge,
        tolerance=tolerance,
    )


def exhaustive_mechanism_mi(
    fw: PPFramework,
    kernel: MechanismKernel,
    bins: int | None = None,
    span: float | None = None,
) -> float:
    """Ground-truth MI-PP level: sup over members and edges of I(g; M | w)."""
    return mechanism_mi_profile(fw, kernel, bins, span).value


def _event_masks(size: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=size)))


def pp_ratio_check(
    fw: PPFramework,
    kernel: MechanismKernel,
    eps: float,
    delta: float,
    enumerate_events: bool = False,
    tolerance: float | None = None,
    bins: int | None = None,
    span: float | None = None,
) -> PPCheckResult:
    """Exhaustive (eps, delta)-PP check over all secret pairs and output events.

    The worst event for a pair is {y : p(y|a,c) > e^eps p(y|b,c)}, so the check
    sums positive excesses. ``enumerate_events`` walks all 2^|Y| events instead
    and is limited to |Y| <= 20.
    """
    if not eps >= 0 or not 0.0 <= delta <= 1.0:
        raise ParameterRangeError(f"Need eps >= 0 and delta in [0, 1], got ({eps}, {delta})")
    tolerance = settings.PP_TOLERANCE if tolerance is None else tolerance
    theta, table, _ = oracle_kernel(fw, kernel, bins, span)
    if enumerate_events and table.output_size > MAX_EVENT_OUTPUTS:
        raise CapabilityError(
            f"Event enumeration needs at most {MAX_EVENT_OUTPUTS} outputs, kernel has "
            f"{table.output_size}"
        )
    masks = _event_masks(table.output_size) if enumerate_events else None
    ratio = math.exp(eps)

    worst = -delta
    witness: PPWitness | None = None
    for member in theta.members():
        for e, (g, w) in enumerate(fw.graph.secret_pairs()):
            joint = induced_joint(member, g, w, table)
            probs = np.asarray(joint.probs)
            for c in range(probs.shape[2]):
                block = probs[:, :, c]
                mass = block.sum(axis=1)
                live = np.flatnonzero(mass > 0)
                if live.size < 2:
                    continue
                cond = block[live] / mass[live, np.newaxis]
                if masks is None:
                    gap = cond[:, np.newaxis, :] - ratio * cond[np.newaxis, :, :]
                    excess = np.clip(gap, 0.0, None).sum(axis=-1)
                else:
                    on_event = cond @ masks.T
                    excess = (on_event[:, np.newaxis, :] - ratio * on_event[np.newaxis, :, :]).max(
                        axis=-1
                    )
                np.fill_diagonal(excess, -math.inf)
                a, b = np.unravel_index(int(np.argmax(excess)), excess.shape)
                value = float(excess[a, b]) - delta
                if value > worst:
                    worst = value
                    event = np.flatnonzero(cond[a] - ratio * cond[b] > 0)
                    witness = PPWitness(
                        member=member.index,
                        edge=e,
                        secret_a=joint.axes[0][live[a]],
                        secret_b=joint.axes[0][live[b]],
                        public_c=joint.axes[2][c],
                        event=tuple(int(y) for y in event),
                        excess=value,
                    )

    holds = worst <= tolerance
    if not holds:
        logger.info(f"({eps}, {delta})-PP fails with excess {worst:.6g}")
    return PPCheckResult(
        holds=holds,
        eps=eps,
        delta=delta,
        worst_excess=worst,
        witness=None if holds else witness,
    )


# Gaussian closed forms


def gaussian_conditional_mi(var_f_given_w: float, sigma2: float) -> float:
    """1/2 log(1 + Var(f|w) / sigma^2); infinite with no noise and positive variance."""
    if not (math.isfinite(var_f_given_w) and math.isfinite(sigma2)):
        raise ParameterRangeError("Variance and noise level must be finite")
    if var_f_given_w < 0 or sigma2 < 0:
        raise ParameterRangeError("Variance and noise level must be non-negative")
    if sigma2 == 0:
        if var_f_given_w > 0:
            logger.warning("Noiseless release of a random query: conditional MI is infinite")
            return math.inf
        return 0.0
    return 0.5 * math.log1p(var_f_given_w / sigma2)


def gaussian_conditional_entropy(cov: Any) -> float:
    """Differential entropy 1/2 log((2 pi e)^d det cov); -inf when singular."""
    mat = np.atleast_2d(np.asarray(cov, dtype=float))
    sign, logdet = np.linalg.slogdet(mat)
    if sign <= 0:
        return -math.inf
    return 0.5 * (mat.shape[0] * math.log(2 * math.pi * math.e) + float(logdet))


def conditional_covariance(
    member: GaussianMember, f: DataFunction, given: DataFunction
) -> np.ndarray:
    """Cov(f(X) | given(X)) for vec(X) Gaussian and linear f, given."""
    cov = np.asarray(member.cov)
    f_mat, g_mat = f.matrix(), given.matrix()
    s_ff = f_mat @ cov @ f_mat.T
    s_fg = f_mat @ cov @ g_mat.T
    s_gg = g_mat @ cov @ g_mat.T
    result = s_ff - s_fg @ np.linalg.pinv(s_gg, hermitian=True) @ s_fg.T
    return (result + result.T) / 2


def _conditional_gain(member: GaussianMember, f: DataFunction, given: DataFunction) -> np.ndarray:
    cov = np.asarray(member.cov)
    f_mat, g_mat = f.matrix(), given.matrix()
    return f_mat @ cov @ g_mat.T @ np.linalg.pinv(g_mat @ cov @ g_mat.T, hermitian=True)


def conditional_groups(
    member: DiscreteMember, f: DataFunction, w: DataFunction
) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """(P(w = c), E[f | w = c], Cov(f | w = c)) for every c with positive mass."""
    f_vals = f.evaluate_many(member.support)
    _, inverse = np.unique(w.evaluate_many(member.support), axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    pmf = np.asarray(member.pmf)
    groups = []
    for c in range(int(inverse.max()) + 1):
        idx = inverse == c
        mass = float(pmf[idx].sum())
        if mass <= 0:
            continue
        weights = pmf[idx] / mass
        mean = weights @ f_vals[idx]
        centered = f_vals[idx] - mean
        groups.append((mass, mean, (centered * weights[:, np.newaxis]).T @ centered))
    return groups


def _estimate(
    var: np.ndarray,
    sd: np.ndarray,
    var_se: np.ndarray | None = None,
    sd_se: np.ndarray | None = None,
    total_se: tuple[float, float] = (0.0, 0.0),
    n_outer: int = 0,
    n_inner: int = 0,
) -> ConditionalVarianceEstimate:
    zeros = np.zeros_like(var)
    return ConditionalVarianceEstimate(
        mean_var=tuple(float(v) for v in var),
        mean_var_se=tuple(float(v) for v in (zeros if var_se is None else var_se)),
        mean_sd=tuple(float(v) for v in sd),
        mean_sd_se=tuple(float(v) for v in (zeros if sd_se is None else sd_se)),
        total_var=float(var.sum()),
        total_var_se=total_se[0],
        total_sd=float(sd.sum()),
        total_sd_se=total_se[1],
        exact=var_se is None,
        n_outer=n_outer,
        n_inner=n_inner,
    )


def conditional_variance(
    member: FamilyMember, f: DataFunction, w: DataFunction
) -> ConditionalVarianceEstimate:
    """Exact E[Var(f_j|w)] and E[sqrt Var(f_j|w)] for Gaussian and discrete members."""
    if isinstance(member, GaussianMember):
        var = np.clip(np.diag(conditional_covariance(member, f, w)), 0.0, None)
        return _estimate(var, np.sqrt(var))
    if isinstance(member, DiscreteMember):
        var = np.zeros(f.output_dim)
        sd = np.zeros(f.output_dim)
        for mass, _, cov in conditional_groups(member, f, w):
            diag = np.clip(np.diag(cov), 0.0, None)
            var += mass * diag
            sd += mass * np.sqrt(diag)
        return _estimate(var, sd)
    raise CapabilityError("Sampled members have no closed form; use mc_conditional_variance")


def conditional_spectrum(
    member: FamilyMember, f: DataFunction, w: DataFunction
) -> tuple[float, float]:
    """Exact (E ||Cov(f|w)||_op, E ||E[f|w]||^2) for Gaussian and discrete members."""
    if isinstance(member, GaussianMember):
        cond = conditional_covariance(member, f, w)
        mean = f.matrix() @ np.asarray(member.mean)
        marginal = f.matrix() @ np.asarray(member.cov) @ f.matrix().T
        op = float(np.linalg.eigvalsh(cond).max())
        spread = float(np.trace(marginal) - np.trace(cond))
        return max(op, 0.0), float(mean @ mean) + max(spread, 0.0)
    if isinstance(member, DiscreteMember):
        op_norm = 0.0
        mean_sq = 0.0
        for mass, mean, cov in conditional_groups(member, f, w):
            op_norm += mass * max(float(np.linalg.eigvalsh(cov).max()), 0.0)
            mean_sq += mass * float(mean @ mean)
        return op_norm, mean_sq
    raise CapabilityError("Sampled members have no closed form; use mc_conditional_spectrum")


# Nested Monte Carlo


class MonteCarloConfig(FrozenModel):
    """Sampling budget for conditional-moment estimation."""

    n_outer: int = Field(default_factory=lambda: settings.MC_OUTER, ge=1)
    n_inner: int = Field(default_factory=lambda: settings.MC_INNER, ge=2)
    seed: int = 0
    workers: int = Field(default_factory=lambda: settings.THREADS, ge=1)
    prefer_exact: bool = True


ConditionalSampler = Callable[[np.random.Generator, int], np.ndarray]


def _psd_root(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def conditional_sampler(
    member: FamilyMember, f: DataFunction, w: DataFunction
) -> ConditionalSampler:
    """Sampler drawing w(X) once, then ``n_inner`` values of f(X) given that w(X)."""
    if isinstance(member, DiscreteMember):
        f_vals = f.evaluate_many(member.support)
        _, inverse = np.unique(w.evaluate_many(member.support), axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        pmf = np.asarray(member.pmf)

        def draw_discrete(rng: np.random.Generator, n_inner: int) -> np.ndarray:
            outer = rng.choice(len(pmf), p=pmf)
            idx = np.flatnonzero(inverse == inverse[outer])
            weights = pmf[idx] / pmf[idx].sum()
            return f_vals[rng.choice(idx, size=n_inner, p=weights)]

        return draw_discrete

    if isinstance(member, GaussianMember):
        mean = np.asarray(member.mean)
        x_root = _psd_root(np.asarray(member.cov))
        cond_root = _psd_root(conditional_covariance(member, f, w))
        gain = _conditional_gain(member, f, w)
        f_mat, w_mat = f.matrix(), w.matrix()

        def draw_gaussian(rng: np.random.Generator, n_inner: int) -> np.ndarray:
            x = mean + x_root @ standard_normal(rng, mean.size)
            center = f_mat @ mean + gain @ (w_mat @ (x - mean))
            return center + standard_normal(rng, (n_inner, cond_root.shape[0])) @ cond_root.T

        return draw_gaussian

    if w.kind == FunctionKind.CONSTANT:

        def draw_unconditional(rng: np.random.Generator, n_inner: int) -> np.ndarray:
            return f.evaluate_many(member.sample_databases(rng, n_inner))

        return draw_unconditional

    if w.kind == FunctionKind.COMPLEMENT_ROWS:
        row = w.index
        assert row is not None
        sampled: SampledMember = member

        def draw_row(rng: np.random.Generator, n_inner: int) -> np.ndarray:
            base = sampled.sample_databases(rng, 1)[0]
            stack = np.repeat(base[np.newaxis], n_inner, axis=0)
            stack[:, row, :] = sampled.row_law.sample(rng, n_inner)
            return f.evaluate_many(stack)

        return draw_row

    raise CapabilityError(
        f"Sample access supports conditioning on complement-rows or constant public "
        f"functions only, not {w.label}"
    )


def _c4(n: int) -> float:
    """E[s] / sigma for the sample standard deviation of n Gaussian draws."""
    return math.exp(
        0.5 * math.log(2.0 / (n - 1)) + special.gammaln(n / 2) - special.gammaln((n - 1) / 2)
    )


def _stderr(values: np.ndarray) -> np.ndarray:
    if values.shape[0] < 2:
        return np.zeros(values.shape[1:])
    return values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])


def mc_conditional_variance(
    member: FamilyMember,
    f: DataFunction,
    w: DataFunction,
    n_outer: int,
    n_inner: int,
    seed: int,
    workers: int = 1,
) -> ConditionalVarianceEstimate:
    """Nested Monte Carlo E[Var(f_j|w)] and E[sqrt Var(f_j|w)] with standard errors.

    Outer draw ``o`` uses the substream (seed, MC, o), so the aggregate does not
    depend on ``workers``. Square roots of sample variances are divided by the
    Gaussian c4 factor.
    """
    if n_outer < 1 or n_inner < 2:
        raise ParameterRangeError(f"Need n_outer >= 1 and n_inner >= 2, got {n_outer}, {n_inner}")
    draw = conditional_sampler(member, f, w)

    def task(o: int) -> np.ndarray:
        return draw(stream(seed, MC_TAG, o), n_inner).var(axis=0, ddof=1)

    variances = np.array(seeded_map(task, range(n_outer), workers))
    deviations = np.sqrt(variances) / _c4(n_inner)
    totals = (
        float(_stderr(variances.sum(axis=1, keepdims=True))[0]),
        float(_stderr(deviations.sum(axis=1, keepdims=True))[0]),
    )
    logger.debug(
        f"MC conditional variance of {f.label} given {w.label}: "
        f"{variances.mean(axis=0)} over {n_outer}x{n_inner} draws"
    )
    return _estimate(
        variances.mean(axis=0),
        deviations.mean(axis=0),
        _stderr(variances),
        _stderr(deviations),
        totals,
        n_outer,
        n_inner,
    )


def mc_conditional_spectrum(
    member: FamilyMember,
    f: DataFunction,
    w: DataFunction,
    n_outer: int,
    n_inner: int,
    seed: int,
    workers: int = 1,
) -> tuple[float, float, float, float]:
    """Monte Carlo (E||Cov(f|w)||_op, stderr, E||E[f|w]||^2, stderr).

    The squared inner mean is debiased by tr(sample cov) / n_inner.
    """
    if n_outer < 1 or n_inner < 2:
        raise ParameterRangeError(f"Need n_outer >= 1 and n_inner >= 2, got {n_outer}, {n_inner}")
    draw = conditional_sampler(member, f, w)

    def task(o: int) -> tuple[float, float]:
        sample = draw(stream(seed, MC_TAG, o), n_inner)
        cov = np.atleast_2d(np.cov(sample, rowvar=False))
        center = sample.mean(axis=0)
        op = float(np.linalg.eigvalsh(cov).max())
        return max(op, 0.0), float(center @ center) - float(np.trace(cov)) / n_inner

    pairs = np.array(seeded_map(task, range(n_outer), workers))
    se = _stderr(pairs)
    mean = pairs.mean(axis=0)
    return float(mean[0]), float(se[0]), max(float(mean[1]), 0.0), float(se[1])


def mc_additive_mi(
    member: GaussianMember,
    f: DataFunction,
    w: DataFunction,
    noise: NoiseSpec,
    n_samples: int,
    seed: int,
    bins: int | None = None,
    span: float | None = None,
) -> tuple[float, float]:
    """Monte Carlo I(f; Q(f + Z) | w) on a binned output grid, with a tolerance.

    Q is the binning. By the Markov chain g - f - release, the value bounds
    I(g; release | w) for every private g. H(Q(f + Z) | w) is a plug-in histogram
    estimate; H(Q(f + Z) | f, w) is computed exactly from the noise CDF on a
    subsample of the draws. The tolerance adds the plug-in bias (B + 1)/(2N) to
    three standard errors.
    """
    bins = settings.GRID_BINS if bins is None else bins
    span = settings.GRID_SPAN if span is None else span
    if n_samples < 2:
        raise ParameterRangeError(f"Need at least 2 samples, got {n_samples}")
    if noise.scale <= 0:
        raise ParameterRangeError("Monte Carlo MI needs positive noise")

    cond = conditional_covariance(member, f, w)
    projection = noise.projection_matrix()
    if projection is not None:
        cond = projection.T @ cond @ projection
    if cond.shape != (1, 1):
        raise CapabilityError("Monte Carlo MI supports scalar releases only")
    spread = math.sqrt(max(float(cond[0, 0]), 0.0))

    rng = stream(seed, MC_TAG)
    signal = spread * standard_normal(rng, n_samples)
    if noise.family == "laplace":
        released = signal + laplace_noise(rng, noise.scale, n_samples)
    else:
        released = signal + gaussian_noise(rng, noise.scale, n_samples)

    half = span * (_noise_width(noise) + spread)
    edges = np.linspace(-half, half, bins + 1)
    inside = np.histogram(released, edges)[0]
    counts = np.concatenate([[np.sum(released < -half)], inside, [np.sum(released > half)]])
    freq = counts / n_samples
    h_release = float(special.entr(freq).sum())
    cell = np.clip(np.searchsorted(edges, released, side="right"), 0, bins + 1)
    surprisal = -np.log(np.clip(freq[cell], 1.0 / n_samples, None))
    se_release = float(surprisal.std(ddof=1)) / math.sqrt(n_samples)

    subsample = signal[:ENTROPY_SUBSAMPLE]
    per_draw = special.entr(_binned_table(_noise_law(noise), subsample, edges)).sum(axis=1)
    h_noise = float(per_draw.mean())
    se_noise = 0.0
    if subsample.size > 1:
        se_noise = float(per_draw.std(ddof=1)) / math.sqrt(subsample.size)

    value = max(0.0, h_release - h_noise)
    tolerance = (bins + 1) / (2 * n_samples) + 3 * math.hypot(se_release, se_noise)
    logger.debug(f"MC additive MI {value:.6g} (tolerance {tolerance:.3g}) from {n_samples} draws")
    return value, tolerance
