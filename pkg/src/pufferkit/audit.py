"""Black-box privacy audit built on the sliced MI statistic.

H0 is that the mechanism satisfies eps-SMI DP (or eps-SMI PP). Every privacy
notion in the target list implies eps-SMI DP, so rejecting H0 certifies that the
target notion is violated. The test is: reject iff statistic > eps + r.
"""

import logging
import time
from collections.abc import Callable
from typing import Literal, TypeVar

import numpy as np
from pydantic import Field, model_validator

from .config import settings
from .models import AuditReport, FrozenModel, ParameterRangeError, SMIEstimate, ValidationError
from .sampling import BOOTSTRAP_TAG, MC_TAG, PROJECTION_TAG, seeded_map, stream, task_seed
from .smi import (
    InnerEstimator,
    NeuralDVConfig,
    SecretSampleSet,
    SliceSampleSet,
    dv_inner,
    plugin_inner,
    smi_dp_statistic,
    smi_secret_statistic,
)

logger = logging.getLogger(__name__)

MIN_MARGIN = 1e-3

AuditTarget = Literal["dp", "mi-dp", "renyi-dp", "smi-dp", "pp"]

IMPLICATIONS: dict[str, str] = {
    "dp": "rejection certifies the mechanism is not eps-SMI DP, hence neither eps-MI DP nor eps-DP",
    "mi-dp": "rejection certifies the mechanism is not eps-SMI DP, hence not eps-MI DP",
    "renyi-dp": (
        "rejection certifies the mechanism is not eps-SMI DP, "
        "hence not eps-Renyi DP of any order >= 1"
    ),
    "smi-dp": "rejection certifies the mechanism is not eps-SMI DP",
    "pp": "rejection certifies the mechanism is not eps-SMI PP, hence neither eps-MI PP nor eps-PP",
}

S = TypeVar("S", SliceSampleSet, SecretSampleSet)
Statistic = tuple[float, int, tuple[SMIEstimate, ...]]


class AuditConfig(FrozenModel):
    """Parameters of one audit run."""

    eps: float = Field(..., gt=0.0, description="Target privacy level")
    level_alpha: float = Field(0.05, gt=0.0, lt=1.0, description="Type-I budget")
    margin: float | Literal["auto"] = Field("auto", description="r > 0 or 'auto'")
    threshold_method: Literal["fixed-margin", "bootstrap-null"] = "fixed-margin"
    inner: Literal["dv", "plugin"] = "dv"
    estimator: NeuralDVConfig = Field(default_factory=NeuralDVConfig)
    plugin_bins: int = Field(16, ge=1)
    p: int = Field(default_factory=lambda: settings.SMI_PROJECTIONS, ge=1)
    replicates: int = Field(default_factory=lambda: settings.BOOTSTRAP_REPLICATES, ge=2)
    seed: int = 0
    workers: int = Field(default_factory=lambda: settings.THREADS, ge=1)
    target: AuditTarget = "dp"

    @model_validator(mode="after")
    def validate_margin(self) -> "AuditConfig":
        if isinstance(self.margin, float) and self.margin <= 0:
            raise ValueError(f"Margin must be positive, got {self.margin}")
        return self

    def inner_estimator(self) -> InnerEstimator:
        if self.inner == "plugin":
            return plugin_inner(self.plugin_bins)
        return dv_inner(self.estimator)


def type1_bound(n: int, k: int, r: float, ell: int, m: int, p: int, C: float = 1.0) -> float:
    """C n^3 k^2 / r (ell^-1/2 + m^-1/2 + p^-1/2); diagnostic only since C is unknown."""
    if min(n, k, ell, m, p) < 1 or r <= 0 or C <= 0:
        raise ParameterRangeError("type1_bound needs positive arguments")
    return C * n**3 * k**2 / r * (ell**-0.5 + m**-0.5 + p**-0.5)


def suggested_margin(C: float, n: int, k: int, alpha: float, ell: int, m: int, p: int) -> float:
    """Margin r at which the Type-I bound equals alpha."""
    if not 0.0 < alpha < 1.0:
        raise ParameterRangeError(f"alpha must lie in (0, 1), got {alpha}")
    return type1_bound(n, k, 1.0, ell, m, p, C) / alpha


def _bootstrap_margin(
    samples: S,
    statistic: Callable[[S, int, int], Statistic],
    centre: float,
    cfg: AuditConfig,
) -> float:
    """(1 - alpha) quantile of |T* - T| over sample and projection resamples."""

    def replicate(b: int) -> float:
        rng = stream(cfg.seed, BOOTSTRAP_TAG, b)
        index = rng.integers(0, samples.m, samples.m)
        value, _, _ = statistic(samples.resample(index), task_seed(cfg.seed, BOOTSTRAP_TAG, b), 1)
        return abs(value - centre)

    spreads = seeded_map(replicate, range(cfg.replicates), cfg.workers)
    quantile = float(np.quantile(spreads, 1.0 - cfg.level_alpha))
    return max(MIN_MARGIN, quantile)


def _run(
    samples: S,
    cfg: AuditConfig,
    reference: S | None,
    statistic: Callable[[S, int, int], Statistic],
) -> AuditReport:
    start = time.perf_counter()
    value, argmax, per_row = statistic(samples, cfg.seed, cfg.workers)

    heuristic = True
    if cfg.threshold_method == "bootstrap-null":
        if reference is None:
            raise ValidationError("Bootstrap-null mode needs samples from a reference mechanism")
        ref_value, _, _ = statistic(reference, cfg.seed, cfg.workers)
        margin = _bootstrap_margin(reference, statistic, ref_value, cfg)
        mode: Literal["fixed-margin", "bootstrap-null"] = "bootstrap-null"
    elif cfg.margin == "auto":
        margin = _bootstrap_margin(samples, statistic, value, cfg)
        mode = "fixed-margin"
    else:
        margin = float(cfg.margin)
        heuristic = False
        mode = "fixed-margin"
    if heuristic:
        logger.warning(f"Audit margin r={margin:.6g} is bootstrap-derived; level is heuristic")

    threshold = cfg.eps + margin
    decision: Literal["no-violation-detected", "violation"] = (
        "violation" if value > threshold else "no-violation-detected"
    )
    logger.info(f"Audit statistic {value:.6g} vs threshold {threshold:.6g}: {decision}")
    return AuditReport(
        statistic=value,
        threshold=threshold,
        decision=decision,
        argmax_row=argmax,
        per_row=tuple(est.value for est in per_row),
        seeds={
            "seed": cfg.seed,
            "projection": PROJECTION_TAG,
            "sample": MC_TAG,
            "bootstrap": BOOTSTRAP_TAG,
        },
        mode=mode,
        margin=margin,
        heuristic=heuristic,
        target=cfg.target,
        implication=IMPLICATIONS[cfg.target],
        runtime_seconds=time.perf_counter() - start,
    )


def audit_dp(
    samples: SliceSampleSet,
    cfg: AuditConfig,
    reference: SliceSampleSet | None = None,
) -> AuditReport:
    """Test eps-SMI DP with the per-row statistic max_i SI(X_i; M(X) | Z_i)."""
    inner = cfg.inner_estimator()

    def statistic(s: SliceSampleSet, seed: int, workers: int) -> Statistic:
        return smi_dp_statistic(s, cfg.p, inner, seed, workers)

    return _run(samples, cfg, reference, statistic)


def audit_pp(
    samples: SecretSampleSet,
    cfg: AuditConfig,
    reference: SecretSampleSet | None = None,
) -> AuditReport:
    """Test eps-SMI PP with max_j SI(g_j(X); M(X)), no public information."""
    inner = cfg.inner_estimator()
    if cfg.target != "pp":
        cfg = cfg.model_copy(update={"target": "pp"})

    def statistic(s: SecretSampleSet, seed: int, workers: int) -> Statistic:
        return smi_secret_statistic(s, cfg.p, inner, seed, workers)

    return _run(samples, cfg, reference, statistic)


def rejection_rate(reports: list[AuditReport]) -> float:
    """Fraction of reports that rejected H0."""
    if not reports:
        raise ValidationError("No audit reports to summarise")
    return sum(r.decision == "violation" for r in reports) / len(reports)
