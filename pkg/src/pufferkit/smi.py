"""Sliced mutual information: Monte Carlo slicing, the neural DV estimator and oracles."""

import logging
import math
from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np
import torch
from pydantic import Field, model_validator
from scipy import special

from .config import settings
from .core import DataFunction, RowLaw
from .infotheory import BlackBox
from .models import (
    DVEstimate,
    FrozenModel,
    SMIEstimate,
    ValidationError,
    frozen_array,
)
from .sampling import (
    MC_TAG,
    PROJECTION_TAG,
    seeded_map,
    standard_normal,
    stream,
    task_seed,
    unit_vector,
)

logger = logging.getLogger(__name__)

# (u, v, seed) -> nats
InnerEstimator = Callable[[np.ndarray, np.ndarray, int], float]
Mechanism = Callable[[np.ndarray, np.random.Generator], np.ndarray] | BlackBox


class SliceSampleSet(FrozenModel):
    """Per row i, m samples of (X_i, Y, Z_i) where Z_i stacks the other rows."""

    x: np.ndarray = Field(..., description="Shape (n, m, k)")
    y: np.ndarray = Field(..., description="Shape (n, m, d)")
    z: np.ndarray = Field(..., description="Shape (n, m, k(n-1))")

    @model_validator(mode="after")
    def validate_shapes(self) -> "SliceSampleSet":
        """Validate consistent lengths and finite entries."""
        if self.x.ndim != 3 or self.y.ndim != 3 or self.z.ndim != 3:
            raise ValueError("Sample arrays must be three dimensional (n, m, dim)")
        n, m, k = self.x.shape
        if n < 1:
            raise ValueError("Sample set needs at least one row index")
        if m < 2:
            raise ValueError(f"Need at least two samples per row, got {m}")
        if self.y.shape[:2] != (n, m) or self.z.shape[:2] != (n, m):
            raise ValueError("x, y and z must agree on (n, m)")
        if self.z.shape[2] != k * (n - 1):
            raise ValueError(f"z must have k(n-1) = {k * (n - 1)} columns")
        for name in ("x", "y", "z"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"Non-finite entries in {name}")
        return self

    @classmethod
    def from_arrays(cls, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> "SliceSampleSet":
        try:
            return cls(x=frozen_array(x), y=frozen_array(y), z=frozen_array(z))
        except ValueError as e:
            raise ValidationError(f"Invalid slice samples: {e}") from e

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def m(self) -> int:
        return int(self.x.shape[1])

    @property
    def k(self) -> int:
        return int(self.x.shape[2])

    @property
    def d(self) -> int:
        return int(self.y.shape[2])

    def record(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The (X_i, Y, Z_i) samples of row ``i``."""
        if not 0 <= i < self.n:
            raise ValidationError(f"Row index {i} out of range for n={self.n}")
        return self.x[i], self.y[i], self.z[i]

    def resample(self, index: np.ndarray) -> "SliceSampleSet":
        """Bootstrap copy keeping samples ``index`` of every row."""
        return SliceSampleSet.from_arrays(self.x[:, index], self.y[:, index], self.z[:, index])


class SecretSampleSet(FrozenModel):
    """m samples of (g_j(X), M(X)) for each private function g_j."""

    secrets: tuple[np.ndarray, ...]
    y: np.ndarray

    @model_validator(mode="after")
    def validate_shapes(self) -> "SecretSampleSet":
        if not self.secrets:
            raise ValueError("Need at least one private function")
        m = self.y.shape[0]
        if m < 2:
            raise ValueError(f"Need at least two samples, got {m}")
        for s in self.secrets:
            if s.ndim != 2 or s.shape[0] != m:
                raise ValueError("Each secret sample array must be (m, dim)")
        return self

    @property
    def m(self) -> int:
        return int(self.y.shape[0])

    def resample(self, index: np.ndarray) -> "SecretSampleSet":
        return SecretSampleSet(
            secrets=tuple(frozen_array(s[index]) for s in self.secrets),
            y=frozen_array(self.y[index]),
        )


class NeuralDVConfig(FrozenModel):
    """One-hidden-layer ReLU critic class with bounded weights."""

    neurons: int = Field(default_factory=lambda: settings.DV_NEURONS, ge=1)
    a: float | None = Field(None, gt=0.0, description="Box size; default set by box_rule")
    box_rule: Literal["calibrated", "theory"] = "calibrated"
    steps: int = Field(default_factory=lambda: settings.DV_STEPS, ge=0)
    step_size: float = Field(default_factory=lambda: settings.DV_STEP_SIZE, gt=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    init_seed: int = 0

    @property
    def box(self) -> float:
        """Effective box size a.

        ``theory`` is max(log log l, 1). ``calibrated`` is max(l/2, 1), which caps
        every output weight at 1/4 on z-scored inputs.
        """
        if self.a is not None:
            return self.a
        if self.box_rule == "calibrated":
            return max(self.neurons / 2, 1.0)
        if self.neurons <= math.e:
            return 1.0
        return max(math.log(math.log(self.neurons)), 1.0)


def project_l1_ball(v: torch.Tensor, radius: float) -> torch.Tensor:
    """Euclidean projection of each row of ``v`` onto the l1 ball of ``radius``."""
    abs_v = v.abs()
    inside = abs_v.sum(dim=-1, keepdim=True) <= radius
    u, _ = torch.sort(abs_v, dim=-1, descending=True)
    css = u.cumsum(dim=-1)
    idx = torch.arange(1, v.shape[-1] + 1, dtype=v.dtype)
    active = (u - (css - radius) / idx) > 0
    rho = (active.to(v.dtype) * idx).amax(dim=-1, keepdim=True)
    theta = (css.gather(-1, rho.long() - 1) - radius) / rho
    projected = torch.sign(v) * torch.clamp(abs_v - theta, min=0.0)
    return torch.where(inside, v, projected)


class ReluCritic(torch.nn.Module):
    """g(z) = sum_i beta_i relu(w_i . z + b_i) + w_0 . z + b_0."""

    def __init__(self, dim: int, neurons: int, box: float, generator: torch.Generator):
        super().__init__()
        self.neurons = neurons
        self.box = box
        self.hidden = torch.nn.Linear(dim, neurons, dtype=torch.float64)
        self.out = torch.nn.Linear(neurons, 1, bias=False, dtype=torch.float64)
        self.skip = torch.nn.Linear(dim, 1, dtype=torch.float64)
        with torch.no_grad():
            for param in self.parameters():
                fresh = torch.rand(param.shape, generator=generator, dtype=torch.float64)
                param.copy_(2.0 * fresh - 1.0)
            self.project()

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        hidden = torch.relu(self.hidden(z))
        return (self.out(hidden) + self.skip(z)).squeeze(-1)

    @torch.no_grad()
    def project(self) -> None:
        """Map the parameters back into the constraint box."""
        beta = self.box / (2 * self.neurons)
        self.out.weight.clamp_(-beta, beta)
        self.hidden.bias.clamp_(-1.0, 1.0)
        self.hidden.weight.copy_(project_l1_ball(self.hidden.weight, 1.0))
        self.skip.weight.copy_(project_l1_ball(self.skip.weight, self.box))
        self.skip.bias.clamp_(-self.box, self.box)


def _dv_objective(critic: ReluCritic, joint: torch.Tensor, negative: torch.Tensor) -> torch.Tensor:
    m = joint.shape[0]
    return critic(joint).mean() - (torch.logsumexp(critic(negative), dim=0) - math.log(m))


def _as_columns(values: np.ndarray, m: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    if arr.ndim != 2 or (m is not None and arr.shape[0] != m):
        raise ValidationError("Samples must be (m,) or (m, dim) with matching m")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("Samples must be finite")
    return arr


def dv_neural_mi(u: np.ndarray, v: np.ndarray, cfg: NeuralDVConfig | None = None) -> DVEstimate:
    """Donsker-Varadhan lower bound on I(U; V) maximized over the ReLU critic class.

    Negatives pair u_i with v_{i+1 mod m}. Inputs are z-scored per column before
    training. Training is full-batch projected ascent: each Adam (or plain
    gradient) step is followed by the projection onto the critic class. Constant
    u or constant v gives 0 flagged as degenerate.
    """
    cfg = cfg or NeuralDVConfig()
    u_arr = _as_columns(u)
    m = u_arr.shape[0]
    v_arr = _as_columns(v, m)
    if m < 2:
        raise ValidationError(f"DV estimation needs m >= 2 samples, got {m}")

    if np.all(u_arr.std(axis=0) == 0) or np.all(v_arr.std(axis=0) == 0):
        logger.warning("Constant samples passed to the DV estimator; returning 0")
        return DVEstimate(value=0.0, degenerate=True, steps=0)

    feats = np.hstack([u_arr, v_arr])
    sd = feats.std(axis=0)
    sd[sd == 0] = 1.0
    feats = (feats - feats.mean(axis=0)) / sd
    du = u_arr.shape[1]
    shifted = np.hstack([feats[:, :du], np.roll(feats[:, du:], -1, axis=0)])
    joint = torch.from_numpy(feats)
    negative = torch.from_numpy(shifted)

    generator = torch.Generator().manual_seed(cfg.init_seed)
    critic = ReluCritic(feats.shape[1], cfg.neurons, cfg.box, generator)
    if cfg.optimizer == "adam":
        opt: torch.optim.Optimizer = torch.optim.Adam(critic.parameters(), lr=cfg.step_size)
    else:
        opt = torch.optim.SGD(critic.parameters(), lr=cfg.step_size)
    schedule = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(cfg.steps, 1))

    for _ in range(cfg.steps):
        opt.zero_grad()
        loss = -_dv_objective(critic, joint, negative)
        loss.backward()
        opt.step()
        schedule.step()
        critic.project()

    with torch.no_grad():
        value = float(_dv_objective(critic, joint, negative))
    logger.debug(f"DV estimate {value:.6g} nats after {cfg.steps} steps on m={m}")
    return DVEstimate(value=value, degenerate=False, steps=cfg.steps)


def _rank_bins(column: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency bin index of every sample, ties broken by position."""
    m = column.shape[0]
    ranks = np.empty(m, dtype=np.int64)
    ranks[np.argsort(column, kind="stable")] = np.arange(m)
    return (ranks * bins) // m


def _labels_entropy(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, axis=0, return_counts=True)
    return float(special.entr(counts / counts.sum()).sum())


def plugin_mi(u: np.ndarray, v: np.ndarray, bins: int = 16) -> float:
    """Plug-in MI of equal-frequency quantizations of the columns of u and v."""
    u_arr = _as_columns(u)
    v_arr = _as_columns(v, u_arr.shape[0])
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    qu = np.column_stack([_rank_bins(c, bins) for c in u_arr.T])
    qv = np.column_stack([_rank_bins(c, bins) for c in v_arr.T])
    value = _labels_entropy(qu) + _labels_entropy(qv) - _labels_entropy(np.hstack([qu, qv]))
    return max(0.0, value)


def plugin_inner(bins: int = 16) -> InnerEstimator:
    """Inner estimator handle for ``plugin_mi``."""

    def estimate(u: np.ndarray, v: np.ndarray, seed: int) -> float:
        return plugin_mi(u, v, bins)

    return estimate


def dv_inner(cfg: NeuralDVConfig | None = None) -> InnerEstimator:
    """Inner estimator handle training one DV critic per call."""
    base = cfg or NeuralDVConfig()

    def estimate(u: np.ndarray, v: np.ndarray, seed: int) -> float:
        return dv_neural_mi(u, v, base.model_copy(update={"init_seed": seed})).value

    return estimate


def sliced_mi(
    x: np.ndarray,
    blocks: Sequence[np.ndarray],
    p: int,
    inner: InnerEstimator | None = None,
    seed: int = 0,
    workers: int = 1,
) -> SMIEstimate:
    """Average over p random directions of I(theta.X; (phi_1.B_1, ..., phi_r.B_r)).

    Every block gets its own uniform direction; empty blocks are skipped.
    Projection j draws from its own substream so results do not depend on workers.
    """
    if p < 1:
        raise ValidationError(f"Projection count must be >= 1, got {p}")
    x_arr = _as_columns(x)
    m = x_arr.shape[0]
    parts = [_as_columns(b, m) for b in blocks]
    parts = [b for b in parts if b.shape[1] > 0]
    if not parts:
        raise ValidationError("Need at least one non-empty block to slice against")
    estimator = inner or dv_inner()

    def one(j: int) -> float:
        rng = stream(seed, PROJECTION_TAG, j)
        u = x_arr @ unit_vector(rng, x_arr.shape[1])
        v = np.column_stack([b @ unit_vector(rng, b.shape[1]) for b in parts])
        return float(estimator(u, v, task_seed(seed, j)))

    values = seeded_map(one, range(p), workers)
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(p)) if p > 1 else 0.0
    return SMIEstimate(value=mean, per_projection=tuple(values), p=p, mean=mean, stderr=stderr)


def smi_mc(
    samples: SliceSampleSet,
    i: int,
    p: int | None = None,
    inner: InnerEstimator | None = None,
    seed: int = 0,
    workers: int = 1,
) -> SMIEstimate:
    """SI(X_i; (Y, Z_i)) for row ``i`` of a sample set."""
    x, y, z = samples.record(i)
    return sliced_mi(x, [y, z], p or settings.SMI_PROJECTIONS, inner, seed, workers)


def smi_dp_statistic(
    samples: SliceSampleSet,
    p: int | None = None,
    inner: InnerEstimator | None = None,
    seed: int = 0,
    workers: int = 1,
) -> tuple[float, int, tuple[SMIEstimate, ...]]:
    """max_i SI(X_i; M(X) | Z_i), the attaining row and the per-row estimates."""
    if samples.n < 1:
        raise ValidationError("SMI DP statistic needs n >= 1")
    per_row = tuple(
        smi_mc(samples, i, p, inner, task_seed(seed, i), workers) for i in range(samples.n)
    )
    values = [est.value for est in per_row]
    argmax = int(np.argmax(values))
    logger.info(f"SMI DP statistic {values[argmax]:.6g} nats at row {argmax}")
    return values[argmax], argmax, per_row


def smi_secret_statistic(
    samples: SecretSampleSet,
    p: int | None = None,
    inner: InnerEstimator | None = None,
    seed: int = 0,
    workers: int = 1,
) -> tuple[float, int, tuple[SMIEstimate, ...]]:
    """max_j SI(g_j(X); M(X)) for frameworks without public functions."""
    per_secret = tuple(
        sliced_mi(
            g, [samples.y], p or settings.SMI_PROJECTIONS, inner, task_seed(seed, j), workers
        )
        for j, g in enumerate(samples.secrets)
    )
    values = [est.value for est in per_secret]
    argmax = int(np.argmax(values))
    return values[argmax], argmax, per_secret


# Gaussian oracles


def _require_pd(cov: np.ndarray) -> np.ndarray:
    sigma = np.asarray(cov, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValidationError("Covariance must be a square matrix")
    try:
        np.linalg.cholesky((sigma + sigma.T) / 2)
    except np.linalg.LinAlgError as e:
        logger.error(f"Covariance is not positive definite: {e}")
        raise ValidationError("Covariance must be positive definite (singular)") from e
    return (sigma + sigma.T) / 2


def gaussian_joint_mi(cov: np.ndarray, dx: int) -> float:
    """I(X; V) = 1/2 log(det S_XX det S_VV / det S) for jointly Gaussian (X, V)."""
    sigma = _require_pd(cov)
    if not 0 < dx < sigma.shape[0]:
        raise ValidationError(f"dx must split the covariance, got {dx}")
    _, ld_x = np.linalg.slogdet(sigma[:dx, :dx])
    _, ld_v = np.linalg.slogdet(sigma[dx:, dx:])
    _, ld = np.linalg.slogdet(sigma)
    return max(0.0, 0.5 * float(ld_x + ld_v - ld))


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    draws = standard_normal(rng, (count, dim))
    norms = np.linalg.norm(draws, axis=1, keepdims=True)
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        draws[bad] = standard_normal(rng, (int(bad.sum()), dim))
        norms = np.linalg.norm(draws, axis=1, keepdims=True)
    return draws / norms


def smi_gaussian_oracle(
    cov: np.ndarray,
    dx: int,
    dy: int,
    n_proj: int = 100_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte Carlo SI(X_i; (Y, Z_i)) for jointly Gaussian blocks, with its stderr.

    Each projection contributes the exact scalar-vs-vector Gaussian MI of
    theta.X against (phi.Y, psi.Z); Z is whatever follows X and Y in ``cov``.
    """
    sigma = _require_pd(cov)
    total = sigma.shape[0]
    dz = total - dx - dy
    if dx < 1 or dy < 1 or dz < 0:
        raise ValidationError(f"Block sizes dx={dx}, dy={dy} do not fit dimension {total}")
    rng = stream(seed, PROJECTION_TAG)
    theta = _unit_rows(rng, n_proj, dx)
    phi = _unit_rows(rng, n_proj, dy)
    rows = 3 if dz > 0 else 2
    proj = np.zeros((n_proj, rows, total))
    proj[:, 0, :dx] = theta
    proj[:, 1, dx : dx + dy] = phi
    if dz > 0:
        proj[:, 2, dx + dy :] = _unit_rows(rng, n_proj, dz)
    c = np.einsum("pia,ab,pjb->pij", proj, sigma, proj)
    det_v = np.linalg.det(c[:, 1:, 1:])
    det_all = np.linalg.det(c)
    values = 0.5 * np.log(c[:, 0, 0] * det_v / det_all)
    values = np.clip(values, 0.0, None)
    stderr = float(values.std(ddof=1) / math.sqrt(n_proj)) if n_proj > 1 else 0.0
    return float(values.mean()), stderr


# Sample simulation


def _release(mechanism: Mechanism, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sampler = mechanism.sampler if isinstance(mechanism, BlackBox) else mechanism
    return np.atleast_1d(np.asarray(sampler(x, rng), dtype=float)).ravel()


def simulate_slice_samples(
    row_law: RowLaw,
    mechanism: Mechanism,
    n: int,
    m: int,
    seed: int = 0,
) -> SliceSampleSet:
    """Draw m i.i.d. databases of n rows and one release each; split per row."""
    if n < 1 or m < 2:
        raise ValidationError(f"Need n >= 1 and m >= 2, got n={n}, m={m}")
    rng = stream(seed, MC_TAG)
    dbs = np.stack([row_law.sample(rng, n) for _ in range(m)])  # (m, n, k)
    releases = np.stack([_release(mechanism, db, rng) for db in dbs])  # (m, d)
    k = row_law.dim
    x = np.transpose(dbs, (1, 0, 2))
    y = np.broadcast_to(releases, (n, *releases.shape))
    z = np.stack(
        [np.delete(dbs, i, axis=1).reshape(m, k * (n - 1)) for i in range(n)]
    )
    return SliceSampleSet.from_arrays(x, y, z)


def simulate_secret_samples(
    row_law: RowLaw,
    privates: Sequence[DataFunction],
    mechanism: Mechanism,
    n: int,
    m: int,
    seed: int = 0,
) -> SecretSampleSet:
    """Draw m databases and record every private function together with the release."""
    if m < 2:
        raise ValidationError(f"Need m >= 2, got {m}")
    rng = stream(seed, MC_TAG)
    dbs = np.stack([row_law.sample(rng, n) for _ in range(m)])
    releases = np.stack([_release(mechanism, db, rng) for db in dbs])
    secrets = tuple(frozen_array(g.evaluate_many(dbs)) for g in privates)
    return SecretSampleSet(secrets=secrets, y=frozen_array(releases))
