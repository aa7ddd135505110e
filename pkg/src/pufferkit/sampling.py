"""Counter-based seeded random streams, noise samplers and worker pools."""

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Stream-key tags keep unrelated consumers of one seed apart.
PROJECTION_TAG = 0x50524F4A
NOISE_TAG = 0x4E4F4953
MC_TAG = 0x4D43
BOOTSTRAP_TAG = 0x424F4F54


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator addressed by ``(seed, *key)``.

    Philox is counter based, so a given address yields the same draws on every
    platform and independently of how work is split across threads.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(sequence))


def standard_normal(rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
    """Standard normal draws by the Box-Muller transform of uniforms."""
    shape = (size,) if isinstance(size, int) else tuple(size)
    total = math.prod(shape)
    pairs = (total + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1]
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:total].reshape(shape)


def gaussian_noise(
    rng: np.random.Generator, sigma2: float, size: int | tuple[int, ...]
) -> np.ndarray:
    """Centered Gaussian noise with variance ``sigma2``."""
    return math.sqrt(sigma2) * standard_normal(rng, size)


def laplace_noise(
    rng: np.random.Generator, b: float, size: int | tuple[int, ...]
) -> np.ndarray:
    """Centered Laplace noise with scale ``b`` by inverse CDF."""
    u = 0.5 - rng.random(size)  # (-1/2, 1/2]
    tail = np.clip(1.0 - 2.0 * np.abs(u), np.finfo(float).tiny, 1.0)
    return -b * np.sign(u) * np.log(tail)


def gaussian_projection_matrix(d: int, ell: int, seed: int) -> np.ndarray:
    """d x ell matrix with i.i.d. N(0, 1/d) entries."""
    rng = stream(seed, PROJECTION_TAG)
    return standard_normal(rng, (d, ell)) / math.sqrt(d)


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform draw from the unit sphere S^{dim-1}."""
    while True:
        v = standard_normal(rng, dim)
        norm = float(np.linalg.norm(v))
        if norm > 0.0:
            return v / norm
        logger.debug("Zero-norm direction drawn; redrawing")


def seeded_map(
    fn: Callable[[T], R], items: Iterable[T], workers: int = 1
) -> list[R]:
    """Ordered map over ``items``; parallel across threads when ``workers > 1``.

    Each task must derive its randomness from its own index so the aggregate
    does not depend on ``workers``.
    """
    batch: Sequence[T] = list(items)
    if workers <= 1 or len(batch) <= 1:
        return [fn(item) for item in batch]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, batch))


def task_seed(seed: int, *key: int) -> int:
    """32-bit integer seed for consumers that take a plain seed, addressed like ``stream``."""
    return int(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)).generate_state(1)[0])
