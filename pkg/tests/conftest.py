"""Shared fixtures for the pufferkit test suite."""

import math

import numpy as np
import pytest

from pufferkit.core import (
    BipartiteSecretGraph,
    DataFunction,
    MultivariateGaussian,
    PPFramework,
    RowLaw,
    build_framework,
)
from pufferkit.smi import simulate_slice_samples


@pytest.fixture
def binary_dp_framework() -> PPFramework:
    """DP secrets over two binary rows drawn uniformly."""
    return build_framework(
        {"n": 2, "k": 1, "preset": "dp", "theta": {"variant": "discrete", "grid": "uniform"}}
    )


@pytest.fixture
def binary_row_framework() -> PPFramework:
    """Row 0 is the only secret; nothing is public."""
    return build_framework(
        {
            "n": 2,
            "k": 1,
            "privates": [{"kind": "row-selector", "index": 0}],
            "theta": {"variant": "discrete", "grid": "uniform"},
        }
    )


@pytest.fixture
def single_bit_framework() -> PPFramework:
    return build_framework(
        {
            "n": 1,
            "k": 1,
            "privates": [{"kind": "row-selector", "index": 0}],
            "theta": {"variant": "discrete", "grid": "uniform"},
        }
    )


@pytest.fixture
def gaussian_dp_framework() -> PPFramework:
    return build_framework(
        {
            "n": 100,
            "k": 1,
            "preset": "dp",
            "theta": {"variant": "product_gaussian", "m": 1.0, "s": 1.0},
        }
    )


def correlated_pair(rho: float) -> tuple[PPFramework, DataFunction]:
    """Two standard normal rows, secret x0, query rho x0 + sqrt(1 - rho^2) x1."""
    graph = BipartiteSecretGraph(
        privates=(DataFunction.row_selector(0, 2, 1),), allow_empty_public=True
    )
    theta = MultivariateGaussian(mean=(0.0,), cov=((1.0,),), n=2)
    fw = PPFramework(graph=graph, theta=theta, n=2, k=1)
    f = DataFunction.linear([rho, math.sqrt(1.0 - rho * rho)], 2, 1)
    return fw, f


@pytest.fixture
def standard_row_law() -> RowLaw:
    return RowLaw(law="gaussian", dim=1, mean=(0.0,))


@pytest.fixture
def leaky_samples(standard_row_law: RowLaw):
    """Three rows; the release is row 1 verbatim."""
    return simulate_slice_samples(
        standard_row_law, lambda db, rng: np.array([db[1, 0]]), n=3, m=2000, seed=11
    )


@pytest.fixture
def quiet_samples(standard_row_law: RowLaw):
    """Two rows; the release is pure noise."""
    return simulate_slice_samples(
        standard_row_law, lambda db, rng: rng.normal(size=1), n=2, m=2000, seed=12
    )
