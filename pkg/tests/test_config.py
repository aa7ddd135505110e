"""Tests for environment-driven settings."""

import pytest
from pydantic import ValidationError as PydanticValidationError

from pufferkit.config import Settings

pytestmark = pytest.mark.unit


def test_defaults():
    s = Settings()
    assert s.APP_NAME == "pufferkit"
    assert s.LOG_LEVEL == "WARNING"
    assert s.MC_OUTER == 2000
    assert s.MC_INNER == 200
    assert s.SMI_PROJECTIONS == 32
    assert s.THREADS >= 1


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("PUFFERKIT_MC_OUTER", "10")
    monkeypatch.setenv("PUFFERKIT_LOG_LEVEL", "debug")
    monkeypatch.setenv("PUFFERKIT_SEED", "42")
    s = Settings()
    assert s.MC_OUTER == 10
    assert s.LOG_LEVEL == "DEBUG"
    assert s.SEED == 42


@pytest.mark.parametrize(
    "name,value",
    [
        ("PUFFERKIT_LOG_LEVEL", "chatty"),
        ("PUFFERKIT_MC_INNER", "0"),
        ("PUFFERKIT_GRID_SPAN", "-1"),
    ],
)
def test_invalid_values_rejected(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(PydanticValidationError):
        Settings()


def test_resolve_seed_precedence(monkeypatch):
    assert Settings().resolve_seed(5) == 5
    assert Settings(SEED=None).resolve_seed(None) == 0
    monkeypatch.setenv("PUFFERKIT_SEED", "9")
    s = Settings()
    assert s.resolve_seed(None) == 9
    assert s.resolve_seed(3) == 3


def test_config_info_lists_effective_values():
    info = Settings(GRID_BINS=64).get_config_info()
    assert info["grid_bins"] == 64
    assert {"threads", "seed", "dv_steps", "median_tol"} <= set(info)
