"""
Runtime settings for ofbmlab.

This module uses Pydantic Settings to load configuration from environment variables
(prefix ``OFBMLAB_``) and an optional ``.env`` file. Values are validated at import
time; experiment-specific parameters live in ``ExperimentConfig`` instead.
"""

import logging
from pathlib import Path

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-wide defaults for the numerical laboratory.

    Configuration is loaded from:
    1. Environment variables such as ``OFBMLAB_THREADS`` (highest priority)
    2. ``.env`` file in the working directory
    3. The defaults below

    Attributes:
        THREADS (int): Worker threads for replicate-parallel loops.
        LOG_LEVEL (str): Root logging level name.
        LOG_DIR (Path): Directory receiving the rotating ``ofbmlab.log`` file.
        HERMITE_MAX_ORDER (int): Default truncation order of Hermite expansions.
        HERMITE_QUAD_NODES (int): Gauss-Hermite nodes per dimension.
        PSD_TOLERANCE (float): Smallest admissible circulant embedding eigenvalue.
        CLIPPED_MASS_LIMIT (float): Largest tolerated clipped share of spectral mass.
        CHOLESKY_MAX_SIZE (int): Largest N*d handled by the block-Cholesky path.
        N_FREQ (int): Frequency cells of the spectral OFBM simulator.
        X_MAX (float): Frequency truncation of the spectral OFBM simulator.
        PERMUTATIONS (int): Permutations of the energy-distance test.
        SIGNIFICANCE (float): Level of the energy-distance test.
        TIGHTNESS_DELTA (float): The delta of the tightness exponent check.
        SLACK_FACTOR (float): Bounded-ratio slack of the Condition H proxy.
        TAIL_RATIO_THRESHOLD (float): Pass level of the reduction-decay check.
        RECORD_TIMINGS (bool): Fill the wall_seconds column of sweep CSVs.
    """
    model_config = SettingsConfigDict(env_prefix="OFBMLAB_", env_file=".env", extra="ignore")

    THREADS: int = 1
    LOG_LEVEL: str = "INFO"
    LOG_DIR: Path = Path(__file__).resolve().parent.parent / "logs"

    # Hermite machinery
    HERMITE_MAX_ORDER: int = 12
    HERMITE_QUAD_NODES: int = 64

    # Gaussian synthesis
    PSD_TOLERANCE: float = 1e-8
    CLIPPED_MASS_LIMIT: float = 1e-6
    CHOLESKY_MAX_SIZE: int = 4096

    # Spectral OFBM simulation
    N_FREQ: int = 2**14
    X_MAX: float = 1e3

    # Statistical checks
    PERMUTATIONS: int = 200
    SIGNIFICANCE: float = 0.01
    TIGHTNESS_DELTA: float = 0.05
    SLACK_FACTOR: float = 4.0
    TAIL_RATIO_THRESHOLD: float = 0.2

    RECORD_TIMINGS: bool = False

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalize_level(cls, v: str) -> str:
        name = str(v).upper()
        if name not in logging._nameToLevel:  # getLevelNamesMapping() is 3.11+
            raise ValueError(f"unknown log level {v!r}")
        return name

    @field_validator("THREADS")
    @classmethod
    def positive_threads(cls, v: int) -> int:
        if v < 1:
            raise ValueError("THREADS must be at least 1")
        return v


# Global settings instance used throughout the package
settings = Settings()
