"""Privacy-budget accounting, UC checks and kernel combinators."""

import itertools
import logging
from collections.abc import Callable, Mapping, Sequence
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from .core import BipartiteSecretGraph, DiscreteFinite, DistributionFamily, PPFramework
from .infotheory import (
    DiscreteKernel,
    JointPMF,
    MechanismKernel,
    conditional_entropy,
    label_onehot,
    oracle_kernel,
)
from .models import (
    CapabilityError,
    CompositionError,
    ConfigError,
    FrozenModel,
    ValidationError,
)
from .relations import eta_cardinality_bound, eta_logconcave_bound

logger = logging.getLogger(__name__)

EtaProvenance = Literal[
    "exact-zero-UC",
    "cardinality-bound",
    "logconcave-bound",
    "user",
    "exact-enumeration",
]


class BudgetEntry(FrozenModel):
    mechanism_id: str
    eps: float = Field(..., ge=0.0)


class PrivacyBudget(FrozenModel):
    """Ledger of per-mechanism eps values and the non-adaptive overhead eta."""

    entries: tuple[BudgetEntry, ...] = ()
    eta: float = Field(0.0, ge=0.0)
    eta_provenance: EtaProvenance | None = None
    mode: Literal["adaptive", "nonadaptive"] = "adaptive"

    @property
    def total_eps(self) -> float:
        return float(sum(entry.eps for entry in self.entries))

    def add(self, mechanism_id: str, eps: float) -> "PrivacyBudget":
        entry = BudgetEntry(mechanism_id=mechanism_id, eps=eps)
        return self.model_copy(update={"entries": (*self.entries, entry)})


class CompositionResult(FrozenModel):
    """Composed level with the trail that justifies it."""

    total: float
    mode: str
    eta: float
    eta_provenance: str | None
    condition: str
    entries: tuple[BudgetEntry, ...]

    def summary(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "mode": self.mode,
            "eta": self.eta,
            "eta_provenance": self.eta_provenance,
            "condition": self.condition,
            "entries": [
                {"mechanism_id": e.mechanism_id, "eps": e.eps} for e in self.entries
            ],
        }


def compose(budget: PrivacyBudget) -> float:
    """Adaptive: sum of eps_i. Non-adaptive: sum of eps_i plus eta."""
    if budget.mode == "adaptive":
        if budget.eta > 0:
            raise CompositionError(
                "Adaptive composition carries no overhead; eta > 0 belongs to non-adaptive mode"
            )
        return budget.total_eps
    if budget.eta_provenance is None:
        raise CompositionError(
            "Non-adaptive composition needs an eta with provenance "
            "(exact, cardinality bound, log-concave bound or user)"
        )
    return budget.total_eps + budget.eta


def compose_report(budget: PrivacyBudget) -> CompositionResult:
    total = compose(budget)
    condition = "adaptive composition" if budget.mode == "adaptive" else "non-adaptive with eta"
    logger.info(f"Composed {len(budget.entries)} mechanisms to {total:.6g} ({condition})")
    return CompositionResult(
        total=total,
        mode=budget.mode,
        eta=budget.eta,
        eta_provenance=budget.eta_provenance,
        condition=condition,
        entries=budget.entries,
    )


def check_uc(theta: DistributionFamily, graph: BipartiteSecretGraph) -> list[bool]:
    """Per member: does every positive-probability secret event pin down the database?"""
    if not isinstance(theta, DiscreteFinite):
        raise CapabilityError(f"UC checks need a finite discrete family, got {theta.variant}")
    support = theta.support()
    secret_values = [
        np.hstack([g.evaluate_many(support), w.evaluate_many(support)])
        for g, w in graph.secret_pairs()
    ]
    verdicts = []
    for member in theta.members():
        live = np.asarray(member.pmf) > 0
        uc = True
        for values in secret_values:
            _, counts = np.unique(values[live], axis=0, return_counts=True)
            if np.any(counts > 1):
                uc = False
                break
        verdicts.append(uc)
    return verdicts


def compose_uc(
    budget: PrivacyBudget,
    theta: DistributionFamily,
    graph: BipartiteSecretGraph,
    each_satisfies_standard_pp: bool = False,
) -> CompositionResult:
    """Sum of eps_i with eta = 0 under universal composability."""
    try:
        all_uc = all(check_uc(theta, graph))
    except CapabilityError:
        if not each_satisfies_standard_pp:
            raise
        all_uc = False

    if all_uc:
        condition = "(i) every family member is UC"
    elif each_satisfies_standard_pp:
        condition = (
            "(ii) family contains the UC distributions; "
            "mechanisms satisfy standard PP (asserted)"
        )
    else:
        raise CompositionError(
            "Neither UC condition holds: some member is not UC and standard PP was not "
            "asserted. Compose non-adaptively with an eta bound instead."
        )
    total = budget.total_eps
    logger.info(f"UC composition of {len(budget.entries)} mechanisms: {total:.6g} via {condition}")
    return CompositionResult(
        total=total,
        mode="uc",
        eta=0.0,
        eta_provenance="exact-zero-UC",
        condition=condition,
        entries=budget.entries,
    )


# Kernel combinators


def _require_discrete(kernel: MechanismKernel) -> DiscreteKernel:
    if not isinstance(kernel, DiscreteKernel):
        raise CapabilityError(f"Combinators need discrete kernels, got {kernel.variant}")
    return kernel


def _aligned(
    kernels: Sequence[DiscreteKernel],
) -> tuple[tuple[tuple[float, ...], ...], list[np.ndarray]]:
    """Tables re-indexed onto the union of the output alphabets."""
    labels = tuple(dict.fromkeys(itertools.chain.from_iterable(k.outputs for k in kernels)))
    position = {label: i for i, label in enumerate(labels)}
    tables = []
    for kernel in kernels:
        table = np.zeros((kernel.table.shape[0], len(labels)))
        table[:, [position[o] for o in kernel.outputs]] = kernel.table
        tables.append(table)
    return labels, tables


def mixture(kernels: Sequence[MechanismKernel], weights: Sequence[float]) -> DiscreteKernel:
    """Run kernel i with probability weights[i]."""
    if not kernels or len(kernels) != len(weights):
        raise ValidationError(f"{len(kernels)} kernels but {len(weights)} weights")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
        raise ValidationError("Mixture weights must be a PMF")
    discrete = [_require_discrete(k) for k in kernels]
    support = discrete[0].support
    if any(not np.array_equal(k.support, support) for k in discrete[1:]):
        raise ValidationError("Mixture components must share a database support")
    labels, tables = _aligned(discrete)
    table = np.tensordot(w, np.stack(tables), axes=1)
    return DiscreteKernel(support=support, outputs=labels, table=table, name="mixture")


def post_process(
    kernel: MechanismKernel,
    channel: np.ndarray | Callable[[tuple[float, ...]], Any],
    outputs: Sequence[Sequence[float]] | None = None,
) -> DiscreteKernel:
    """A o M for a row-stochastic channel matrix or a deterministic output map."""
    base = _require_discrete(kernel)
    if callable(channel):
        mapped = [tuple(float(v) for v in np.atleast_1d(channel(y))) for y in base.outputs]
        labels = tuple(dict.fromkeys(mapped))
        position = {label: i for i, label in enumerate(labels)}
        matrix = np.zeros((base.output_size, len(labels)))
        matrix[np.arange(base.output_size), [position[m] for m in mapped]] = 1.0
    else:
        matrix = np.asarray(channel, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != base.output_size:
            raise ValidationError(
                f"Channel must have {base.output_size} rows, got shape {matrix.shape}"
            )
        if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("Channel rows must be PMFs")
        labels = (
            tuple((float(j),) for j in range(matrix.shape[1]))
            if outputs is None
            else tuple(tuple(float(v) for v in o) for o in outputs)
        )
        if len(labels) != matrix.shape[1]:
            raise ValidationError("Channel output labels disagree with its column count")
    return DiscreteKernel(
        support=base.support,
        outputs=labels,
        table=base.table @ matrix,
        name=f"post({base.name})",
    )


def product_kernel(kernels: Sequence[MechanismKernel]) -> DiscreteKernel:
    """Independent mechanisms run on the same database, outputs concatenated."""
    discrete = [_require_discrete(k) for k in kernels]
    if not discrete:
        raise ValidationError("Need at least one kernel")
    support = discrete[0].support
    if any(not np.array_equal(k.support, support) for k in discrete[1:]):
        raise ValidationError("Product components must share a database support")
    table = discrete[0].table
    labels = discrete[0].outputs
    for kernel in discrete[1:]:
        table = (table[:, :, np.newaxis] * kernel.table[:, np.newaxis, :]).reshape(
            table.shape[0], -1
        )
        labels = tuple(a + b for a, b in itertools.product(labels, kernel.outputs))
    return DiscreteKernel(support=support, outputs=labels, table=table, name="product")


def exact_eta(
    fw: PPFramework,
    kernels: Sequence[MechanismKernel],
    bins: int | None = None,
    span: float | None = None,
) -> float:
    """sup over members and edges of sum_{i>=2} I(M_i; M^{i-1} | g, w), by enumeration."""
    tables = [oracle_kernel(fw, k, bins, span)[1] for k in kernels]
    if len(tables) < 2:
        return 0.0
    theta = fw.theta
    assert isinstance(theta, DiscreteFinite)
    support = theta.support()
    worst = 0.0
    for g, w in fw.graph.secret_pairs():
        secret = np.hstack([g.evaluate_many(support), w.evaluate_many(support)])
        _, secret_hot = label_onehot(secret)
        for member in theta.members():
            joint = np.asarray(member.pmf)[:, np.newaxis] * secret_hot
            for table in tables:
                expand = table.reshape(table.shape[0], *([1] * (joint.ndim - 1)), table.shape[1])
                joint = joint[..., np.newaxis] * expand
            pmf = JointPMF.from_array(joint.sum(axis=0))
            eta = 0.0
            for i in range(2, len(tables) + 1):
                current, history = [i], list(range(1, i))
                eta += max(
                    0.0,
                    conditional_entropy(pmf, current, [0])
                    + conditional_entropy(pmf, history, [0])
                    - conditional_entropy(pmf, [*history, *current], [0]),
                )
            worst = max(worst, eta)
    logger.debug(f"Exact eta over {len(tables)} kernels: {worst:.6g}")
    return worst


# Budget files


class BudgetEntryConfig(BaseModel):
    id: str
    eps: float


class BudgetConfig(BaseModel):
    """Budget description as read from TOML or JSON."""

    mode: Literal["adaptive", "nonadaptive", "uc"] = "adaptive"
    entries: list[BudgetEntryConfig] = Field(default_factory=list)
    eta: float | None = None
    eta_provenance: EtaProvenance | None = None
    supp_sizes: list[int] | None = None
    logconcave_terms: list[float] | None = None
    standard_pp: bool = False

    @model_validator(mode="after")
    def validate_eta_source(self) -> "BudgetConfig":
        sources = [self.eta, self.supp_sizes, self.logconcave_terms]
        if sum(s is not None for s in sources) > 1:
            raise ValueError("Give at most one of eta, supp_sizes, logconcave_terms")
        return self


def budget_from_config(config: BudgetConfig | Mapping[str, Any]) -> PrivacyBudget:
    """Build a PrivacyBudget, resolving eta bounds through the relations module."""
    try:
        cfg = config if isinstance(config, BudgetConfig) else BudgetConfig(**config)
    except PydanticValidationError as e:
        logger.error(f"Malformed budget config: {e}")
        raise ConfigError(f"Malformed budget config: {e}") from e

    eta, provenance = 0.0, cfg.eta_provenance
    if cfg.supp_sizes is not None:
        eta, provenance = eta_cardinality_bound(cfg.supp_sizes), "cardinality-bound"
    elif cfg.logconcave_terms is not None:
        eta, provenance = eta_logconcave_bound(cfg.logconcave_terms), "logconcave-bound"
    elif cfg.eta is not None:
        eta, provenance = cfg.eta, cfg.eta_provenance or "user"

    try:
        return PrivacyBudget(
            entries=tuple(BudgetEntry(mechanism_id=e.id, eps=e.eps) for e in cfg.entries),
            eta=eta,
            eta_provenance=provenance,
            mode="adaptive" if cfg.mode == "uc" else cfg.mode,
        )
    except PydanticValidationError as e:
        logger.error(f"Invalid budget: {e}")
        raise ValidationError(f"Invalid budget: {e}") from e
