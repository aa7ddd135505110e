"""Configuration settings for pufferkit."""

import logging
from typing import Any

import psutil
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from . import __version__

logger = logging.getLogger(__name__)


def _logical_cores() -> int:
    return psutil.cpu_count(logical=True) or 1


class Settings(BaseSettings):
    """Toolkit settings, overridable through ``PUFFERKIT_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="PUFFERKIT_", extra="ignore")

    # Application settings
    APP_NAME: str = "pufferkit"
    APP_VERSION: str = __version__
    LOG_LEVEL: str = "WARNING"

    # Reproducibility and parallelism
    SEED: int | None = None
    THREADS: int = Field(default_factory=_logical_cores)

    # Monte Carlo conditional variance
    MC_OUTER: int = 2000
    MC_INNER: int = 200

    # Discretization of additive noise for the exact oracle
    GRID_BINS: int = 512
    GRID_SPAN: float = 8.0
    PP_TOLERANCE: float = 1e-12

    # Neural DV estimator and slicing
    DV_NEURONS: int = 64
    DV_STEPS: int = 500
    DV_STEP_SIZE: float = 0.05
    SMI_PROJECTIONS: int = 32
    BOOTSTRAP_REPLICATES: int = 50

    # Geometric median
    MEDIAN_TOL: float = 1e-7
    MEDIAN_MAX_ITERS: int = 1000

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate that the log level is one the logging module knows."""
        level = v.strip().upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"Unknown log level: {v}")
        return level

    @field_validator(
        "THREADS",
        "MC_OUTER",
        "MC_INNER",
        "GRID_BINS",
        "DV_NEURONS",
        "DV_STEPS",
        "SMI_PROJECTIONS",
        "BOOTSTRAP_REPLICATES",
        "MEDIAN_MAX_ITERS",
    )
    @classmethod
    def validate_positive_count(cls, v: int) -> int:
        """Validate counts are positive."""
        if v < 1:
            raise ValueError(f"Count settings must be >= 1, got {v}")
        return v

    @field_validator("GRID_SPAN", "DV_STEP_SIZE", "MEDIAN_TOL")
    @classmethod
    def validate_positive_real(cls, v: float) -> float:
        """Validate real-valued knobs are positive."""
        if not v > 0:
            raise ValueError(f"Real-valued settings must be > 0, got {v}")
        return v

    def resolve_seed(self, seed: int | None) -> int:
        """Return the explicit seed, else ``PUFFERKIT_SEED``, else 0."""
        if seed is not None:
            return seed
        if self.SEED is not None:
            return self.SEED
        logger.warning("No seed given and PUFFERKIT_SEED unset; using seed 0")
        return 0

    def get_config_info(self) -> dict[str, Any]:
        """Get the effective configuration for run manifests."""
        return {
            "app_name": self.APP_NAME,
            "app_version": self.APP_VERSION,
            "log_level": self.LOG_LEVEL,
            "seed": self.SEED,
            "threads": self.THREADS,
            "mc_outer": self.MC_OUTER,
            "mc_inner": self.MC_INNER,
            "grid_bins": self.GRID_BINS,
            "grid_span": self.GRID_SPAN,
            "pp_tolerance": self.PP_TOLERANCE,
            "dv_neurons": self.DV_NEURONS,
            "dv_steps": self.DV_STEPS,
            "dv_step_size": self.DV_STEP_SIZE,
            "smi_projections": self.SMI_PROJECTIONS,
            "bootstrap_replicates": self.BOOTSTRAP_REPLICATES,
            "median_tol": self.MEDIAN_TOL,
            "median_max_iters": self.MEDIAN_MAX_ITERS,
        }


settings = Settings()
