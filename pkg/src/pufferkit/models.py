"""Report models, configuration models and exceptions for pufferkit."""

from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .sampling import gaussian_projection_matrix


class PufferkitError(Exception):
    """Base exception for pufferkit."""

    pass


class ValidationError(PufferkitError, ValueError):
    """Custom exception for invalid inputs, shapes and indices."""

    pass


class ConfigError(PufferkitError):
    """Custom exception for unparseable configuration and data files."""

    pass


class CapabilityError(PufferkitError):
    """Raised when an operation does not support the given variant."""

    pass


class ParameterRangeError(PufferkitError, ValueError):
    """Raised when a numeric argument is outside its valid range."""

    pass


class CompositionError(PufferkitError):
    """Raised when a privacy budget is composed under the wrong theorem."""

    pass


class FrozenModel(BaseModel):
    """Immutable pydantic model that tolerates numpy payloads."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __eq__(self, other: object) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        return all(
            _values_equal(getattr(self, name), getattr(other, name))
            for name in type(self).model_fields
        )

    __hash__ = None  # type: ignore[assignment]


def _values_equal(a: Any, b: Any) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return bool(np.array_equal(np.asarray(a), np.asarray(b)))
    if isinstance(a, tuple | list) and isinstance(b, tuple | list):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return bool(a == b)


def frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    """Copy ``values`` into a read-only numpy array."""
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# Noise and calibration


class RandomProjectionSpec(FrozenModel):
    """Seeded random projection with i.i.d. N(0, 1/d) entries."""

    seed: int = Field(..., description="Seed of the projection stream")
    ell: int = Field(..., ge=1, description="Projection dimension")
    law: Literal["gaussian-entries-variance-1/d"] = "gaussian-entries-variance-1/d"


class NoiseSpec(FrozenModel):
    """Calibrated additive noise: Laplace scale b or Gaussian variance sigma^2."""

    family: Literal["laplace", "gaussian"]
    scale: float = Field(..., ge=0.0, description="Laplace b or Gaussian sigma^2")
    dim: int = Field(..., ge=1, description="Output dimension d of the query")
    projection: tuple[tuple[float, ...], ...] | RandomProjectionSpec | None = None

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v: float) -> float:
        """Validate the noise scale is finite."""
        if not np.isfinite(v):
            raise ValueError(f"Noise scale must be finite, got {v}")
        return v

    @model_validator(mode="after")
    def validate_projection(self) -> "NoiseSpec":
        """Validate projection shape d x ell with ell <= d."""
        if isinstance(self.projection, RandomProjectionSpec):
            if self.projection.ell > self.dim:
                raise ValueError(
                    f"Projection dimension {self.projection.ell} exceeds d={self.dim}"
                )
        elif self.projection is not None:
            rows = len(self.projection)
            cols = {len(r) for r in self.projection}
            if rows != self.dim or len(cols) != 1:
                raise ValueError(f"Projection matrix must have {self.dim} equal rows")
            if cols.pop() > self.dim:
                raise ValueError("Projection column count must not exceed d")
        return self

    def projection_matrix(self) -> np.ndarray | None:
        """The d x ell matrix A applied as A^T f(x), or None."""
        if isinstance(self.projection, RandomProjectionSpec):
            return gaussian_projection_matrix(
                self.dim, self.projection.ell, self.projection.seed
            )
        if self.projection is not None:
            return np.array(self.projection, dtype=float)
        return None

    @property
    def output_dim(self) -> int:
        """Dimension of the released vector (ell under projection, else d)."""
        if isinstance(self.projection, RandomProjectionSpec):
            return self.projection.ell
        if self.projection is not None:
            return len(self.projection[0])
        return self.dim


class CalibrationReport(FrozenModel):
    """Outcome of a noise calibration."""

    method: str
    noise: NoiseSpec
    bound_raw: float = Field(..., ge=0.0)
    bound_inflated: float = Field(..., ge=0.0)
    stderr: float = Field(0.0, ge=0.0)
    witness: str = ""
    free_regime: bool = False
    assumptions: tuple[str, ...] = ()
    sweep: dict[int, float] | None = None

    @property
    def bound_value(self) -> float:
        """The bound the noise was set to (inflated when estimated)."""
        return self.bound_inflated

    def summary(self) -> dict[str, Any]:
        """Fixed-order report fields for the CLI."""
        return {
            "method": self.method,
            "family": self.noise.family,
            "b_or_sigma2": self.noise.scale,
            "bound_raw": self.bound_raw,
            "bound_inflated": self.bound_inflated,
            "stderr": self.stderr,
            "witness": self.witness,
            "free_regime": self.free_regime,
        }


class ConditionalVarianceEstimate(FrozenModel):
    """Per-coordinate E[Var(f_j|w)] and E[sqrt Var(f_j|w)] with standard errors."""

    mean_var: tuple[float, ...]
    mean_var_se: tuple[float, ...]
    mean_sd: tuple[float, ...]
    mean_sd_se: tuple[float, ...]
    total_var: float
    total_var_se: float
    total_sd: float
    total_sd_se: float
    exact: bool = False
    n_outer: int = 0
    n_inner: int = 0


# Oracles


class PPWitness(FrozenModel):
    """Secret pair and output event violating (eps, delta)-PP."""

    member: int
    edge: int
    secret_a: tuple[float, ...]
    secret_b: tuple[float, ...]
    public_c: tuple[float, ...]
    event: tuple[int, ...]
    excess: float


class PPCheckResult(FrozenModel):
    """Result of the exhaustive (eps, delta)-PP ratio check."""

    holds: bool
    eps: float
    delta: float
    worst_excess: float
    witness: PPWitness | None = None


class OracleMIReport(FrozenModel):
    """Brute-force conditional MI per family member and edge."""

    value: float
    member: int
    edge: int
    per_edge: tuple[tuple[float, ...], ...]
    tolerance: float = 0.0


# Conversions


class ConversionResult(FrozenModel):
    """A privacy-currency conversion together with the assumptions it needs."""

    input_notion: str
    output_notion: str
    params_in: tuple[float, ...]
    params_out: tuple[float, ...]
    assumptions: tuple[str, ...] = ()
    vacuous: bool = False


class TripleBound(FrozenModel):
    """Likelihood-ratio bounds for a secret triple (a, b, c)."""

    alpha: float = Field(..., gt=0.0, le=1.0, description="Minimum likelihood ratio")
    beta: float = Field(..., ge=0.0, description="Infimum ratio")


class PairBound(FrozenModel):
    """Joint density bounds for a secret pair (a, c)."""

    upper: float = Field(..., gt=0.0, description="Supremum of the joint density")
    lower: float = Field(..., description="Infimum of the joint density")

    @model_validator(mode="after")
    def validate_order(self) -> "PairBound":
        """Validate u >= l > 0."""
        if self.lower <= 0:
            raise ValueError(f"Density lower bound must be positive, got {self.lower}")
        if self.upper < self.lower:
            raise ValueError("Density upper bound is below the lower bound")
        return self


class DensityBoundSummary(FrozenModel):
    """Density bounds backing the condition-(2) conversion."""

    triples: tuple[TripleBound, ...] = ()
    pairs: tuple[PairBound, ...] = ()


# Estimation


class SMIEstimate(FrozenModel):
    """Monte Carlo sliced mutual information estimate."""

    value: float
    per_projection: tuple[float, ...]
    p: int
    mean: float
    stderr: float


class DVEstimate(FrozenModel):
    """Trained Donsker-Varadhan objective."""

    value: float
    degenerate: bool = False
    steps: int = 0


class AuditReport(FrozenModel):
    """Outcome of the SMI-based privacy audit."""

    statistic: float
    threshold: float
    decision: Literal["no-violation-detected", "violation"]
    argmax_row: int
    per_row: tuple[float, ...]
    seeds: dict[str, int]
    mode: Literal["fixed-margin", "bootstrap-null"]
    margin: float
    heuristic: bool
    target: str
    implication: str
    runtime_seconds: float = 0.0

    @model_validator(mode="after")
    def validate_decision(self) -> "AuditReport":
        """Decision must be violation exactly when statistic > threshold."""
        violated = self.statistic > self.threshold
        if violated != (self.decision == "violation"):
            raise ValueError("Audit decision disagrees with statistic and threshold")
        return self

    def summary(self) -> dict[str, Any]:
        """Fixed-order report fields for the CLI."""
        return {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "decision": self.decision,
            "argmax_row": self.argmax_row,
            "per_row": list(self.per_row),
            "seeds": dict(self.seeds),
            "mode": self.mode,
            "margin": self.margin,
            "heuristic": self.heuristic,
            "target": self.target,
            "implication": self.implication,
        }


class GeometricMedianResult(FrozenModel):
    """Weiszfeld output with its optimality certificate."""

    point: tuple[float, ...]
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool


class MeanEstimate(FrozenModel):
    """Private mean together with the run's chunk layout."""

    estimate: tuple[float, ...]
    m: int
    k: int
    sigma2: float
    iterations: int
    flags: tuple[str, ...] = ()
    discarded: int = 0
    effective_beta: float

    def summary(self) -> dict[str, Any]:
        """Fixed-order report fields for the CLI."""
        return {
            "estimate": list(self.estimate),
            "m": self.m,
            "k": self.k,
            "sigma2": self.sigma2,
            "iterations": self.iterations,
            "flags": list(self.flags),
            "discarded": self.discarded,
            "effective_beta": self.effective_beta,
        }


class SampleComplexity(FrozenModel):
    """Sample size n0 from the single-iteration lemma constants."""

    n0: int
    n0_raw: float
    m: int
    m_raw: float
    k: int
    k_accuracy: float
    k_privacy: float
    alpha_prime: float
    constants: tuple[float, float]


class RunManifest(FrozenModel):
    """Provenance record emitted with every CLI report."""

    command: str
    config_digest: str
    seeds: dict[str, int]
    tool_version: str
    wall_time_seconds: float
