"""eps-MI DP mean estimation by chunked noisy means and median aggregation."""

import logging
import math
from typing import Literal

import numpy as np
from pydantic import Field

from .config import settings
from .models import (
    FrozenModel,
    GeometricMedianResult,
    MeanEstimate,
    ParameterRangeError,
    SampleComplexity,
    ValidationError,
)
from .sampling import NOISE_TAG, gaussian_noise, seeded_map, stream

logger = logging.getLogger(__name__)

DEFAULT_MULTIPLIER = 200.0
# Single-iteration accuracy constants: k >= 4dc/(0.1 a'^2) and k >= 2dc sqrt(ln 20)/(a' sqrt(eps)).
ACCURACY_CONSTANT = 4.0 / 0.1
PRIVACY_CONSTANT = 2.0 * math.sqrt(math.log(20.0))
ALPHA_SHRINK = 1.04


class MeanEstConfig(FrozenModel):
    """Parameters of the private mean estimator."""

    eps: float = Field(..., gt=0.0)
    beta: float = Field(0.05, gt=0.0, lt=1.0, description="Failure probability")
    d: int | None = Field(None, ge=1, description="Dimension; taken from the samples if unset")
    second_moment_bound: float = Field(1.0, gt=0.0, description="c >= E||X - mu||^2")
    m_multiplier: float = Field(DEFAULT_MULTIPLIER, gt=0.0)
    median: Literal["geometric", "coordinatewise"] = "geometric"
    tol: float = Field(default_factory=lambda: settings.MEDIAN_TOL, gt=0.0)
    max_iters: int = Field(default_factory=lambda: settings.MEDIAN_MAX_ITERS, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)


class ChunkPlan(FrozenModel):
    """Chunk layout and per-chunk noise for n samples."""

    n: int
    m: int
    k: int
    sigma2: float
    discarded: int
    effective_beta: float

    def rows(self, p: int) -> range:
        """Sample indices of chunk ``p``."""
        return range(p * self.k, (p + 1) * self.k)


def chunk_count(beta: float, m_multiplier: float = DEFAULT_MULTIPLIER) -> int:
    """m = floor(multiplier * ln(1/beta))."""
    if not 0.0 < beta < 1.0:
        raise ParameterRangeError(f"beta must lie in (0, 1), got {beta}")
    m = math.floor(m_multiplier * math.log(1.0 / beta))
    if m < 1:
        raise ParameterRangeError(
            f"Chunk count floor({m_multiplier} ln(1/{beta})) is below 1; raise m_multiplier"
        )
    return m


def chunk_plan(n: int, d: int, cfg: MeanEstConfig) -> ChunkPlan:
    """Chunk layout and sigma^2 = c d m^2 / (2 n^2 eps) without touching data."""
    m = chunk_count(cfg.beta, cfg.m_multiplier)
    if n < m:
        raise ValidationError(
            f"n={n} is below the chunk count m={m}; lower m_multiplier or raise beta"
        )
    k = n // m
    sigma2 = cfg.second_moment_bound * d * m * m / (2.0 * n * n * cfg.eps)
    return ChunkPlan(
        n=n,
        m=m,
        k=k,
        sigma2=sigma2,
        discarded=n - m * k,
        effective_beta=math.exp(-m / cfg.m_multiplier),
    )


def median_objective(points: np.ndarray, y: np.ndarray) -> float:
    """Sum of Euclidean distances from ``y`` to the points."""
    return float(np.linalg.norm(points - y, axis=1).sum())


def _as_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, np.newaxis]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValidationError("Need at least one point, shaped (m, d)")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("Points must be finite")
    return pts


def geometric_median(
    points: np.ndarray,
    tol: float | None = None,
    max_iters: int | None = None,
) -> GeometricMedianResult:
    """Weiszfeld iteration with the Vardi-Zhang step at data points.

    Stops once the mean (sub)gradient norm is at most ``tol``. On hitting
    ``max_iters`` the best iterate is returned with ``converged=False``.
    """
    pts = _as_points(points)
    tol = settings.MEDIAN_TOL if tol is None else tol
    max_iters = settings.MEDIAN_MAX_ITERS if max_iters is None else max_iters
    count = pts.shape[0]
    scale = max(1.0, float(np.abs(pts).max()))

    y = pts.mean(axis=0)
    best, best_obj = y, median_objective(pts, y)
    grad_norm = math.inf
    for iteration in range(max_iters + 1):
        dist = np.linalg.norm(pts - y, axis=1)
        coincident = dist <= 1e-12 * scale
        eta = int(coincident.sum())
        inv = np.zeros(count)
        inv[~coincident] = 1.0 / dist[~coincident]
        pull = ((pts - y) * inv[:, np.newaxis]).sum(axis=0)
        r = float(np.linalg.norm(pull))
        grad_norm = max(0.0, r - eta) / count

        obj = median_objective(pts, y)
        if obj < best_obj:
            best, best_obj = y, obj
        if grad_norm <= tol:
            logger.debug(f"Weiszfeld converged after {iteration} iterations")
            return GeometricMedianResult(
                point=tuple(float(v) for v in y),
                objective=obj,
                gradient_norm=grad_norm,
                iterations=iteration,
                converged=True,
            )
        if iteration == max_iters:
            break

        weighted = (pts * inv[:, np.newaxis]).sum(axis=0) / inv.sum()
        if eta == 0:
            y = weighted
        else:
            shrink = min(1.0, eta / r)
            y = (1.0 - shrink) * weighted + shrink * y

    logger.warning(f"Weiszfeld did not reach tol={tol} in {max_iters} iterations")
    return GeometricMedianResult(
        point=tuple(float(v) for v in best),
        objective=best_obj,
        gradient_norm=grad_norm,
        iterations=max_iters,
        converged=False,
    )


def coordinatewise_median(points: np.ndarray) -> np.ndarray:
    """Per-coordinate sample median."""
    return np.median(_as_points(points), axis=0)


def noisy_chunk_means(
    samples: np.ndarray, plan: ChunkPlan, seed: int, workers: int = 1
) -> np.ndarray:
    """(m, d) chunk means plus N(0, sigma^2 I); chunk p only reads rows of block p."""
    d = samples.shape[1]

    def chunk(p: int) -> np.ndarray:
        block = plan.rows(p)
        rows = samples[block.start : block.stop]
        noise = gaussian_noise(stream(seed, NOISE_TAG, p), plan.sigma2, d)
        return rows.mean(axis=0) + noise

    return np.stack(seeded_map(chunk, range(plan.m), workers))


def private_mean(samples: np.ndarray, cfg: MeanEstConfig) -> MeanEstimate:
    """Private mean of n x d samples; leftover rows past m*k are discarded."""
    data = _as_points(samples)
    n, d = data.shape
    if cfg.d is not None and cfg.d != d:
        raise ValidationError(f"Samples have dimension {d}, config says {cfg.d}")
    plan = chunk_plan(n, d, cfg)
    means = noisy_chunk_means(data, plan, cfg.seed, cfg.workers)

    flags: list[str] = []
    if cfg.median == "geometric":
        result = geometric_median(means, cfg.tol, cfg.max_iters)
        estimate = np.array(result.point)
        iterations = result.iterations
        if not result.converged:
            flags.append("median-not-converged")
    else:
        estimate = coordinatewise_median(means)
        iterations = 0
    if plan.discarded:
        logger.debug(f"Discarded {plan.discarded} trailing samples")
    logger.info(f"Private mean over m={plan.m} chunks of k={plan.k}, sigma2={plan.sigma2:.6g}")
    return MeanEstimate(
        estimate=tuple(float(v) for v in estimate),
        m=plan.m,
        k=plan.k,
        sigma2=plan.sigma2,
        iterations=iterations,
        flags=tuple(flags),
        discarded=plan.discarded,
        effective_beta=plan.effective_beta,
    )


def sample_complexity(
    alpha: float,
    beta: float,
    eps: float,
    d: int,
    c: float = 1.0,
    constants: tuple[float, float] = (ACCURACY_CONSTANT, PRIVACY_CONSTANT),
    median: Literal["geometric", "coordinatewise"] = "geometric",
    m_multiplier: float = DEFAULT_MULTIPLIER,
) -> SampleComplexity:
    """n0 = m * k with k the larger of the accuracy and privacy chunk sizes."""
    if min(alpha, eps, c) <= 0 or d < 1:
        raise ParameterRangeError("alpha, eps, c and d must be positive")
    if not 0.0 < beta < 1.0:
        raise ParameterRangeError(f"beta must lie in (0, 1), got {beta}")
    alpha_prime = alpha / ALPHA_SHRINK
    k_accuracy = constants[0] * d * c / alpha_prime**2
    k_privacy = constants[1] * d * c / (alpha_prime * math.sqrt(eps))
    log_term = math.log(d / beta) if median == "coordinatewise" else math.log(1.0 / beta)
    m_raw = m_multiplier * log_term
    m = max(1, math.floor(m_raw))
    k = math.ceil(max(k_accuracy, k_privacy))
    return SampleComplexity(
        n0=m * k,
        n0_raw=m_raw * max(k_accuracy, k_privacy),
        m=m,
        m_raw=m_raw,
        k=k,
        k_accuracy=k_accuracy,
        k_privacy=k_privacy,
        alpha_prime=alpha_prime,
        constants=constants,
    )
