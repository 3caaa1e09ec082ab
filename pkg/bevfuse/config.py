import logging
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict

from bevfuse.errors import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="BEVFUSE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Runtime
    THREADS: int = 1
    LOG_LEVEL: str = "INFO"
    ENVIRONMENT: str = "development"

    # Presets
    DEFAULT_PRESET: Literal["desk", "fidelity"] = "desk"
    DEFAULT_SEED: int = 0

    # Evaluation
    CAMERA_RANGE_M: float = 6.0

    # Acoustics (time -> distance conversion in the simulator)
    SPEED_OF_SOUND_MPS: float = 343.0

    # Synchronisation
    ODOMETRY_MAX_GAP_MS: float = 200.0

    # Fisheye unprojection
    NEWTON_TOLERANCE_RAD: float = 1e-10
    NEWTON_MAX_ITERATIONS: int = 50


# Create settings instance
settings = Settings()


def validate_config() -> bool:
    """Validate that the runtime configuration is usable"""
    problems = []
    if settings.THREADS < 1:
        problems.append(f"THREADS must be >= 1, got {settings.THREADS}")
    if settings.CAMERA_RANGE_M <= 0:
        problems.append("CAMERA_RANGE_M must be positive")
    if settings.SPEED_OF_SOUND_MPS <= 0:
        problems.append("SPEED_OF_SOUND_MPS must be positive")
    if settings.NEWTON_MAX_ITERATIONS < 1:
        problems.append("NEWTON_MAX_ITERATIONS must be >= 1")
    if problems:
        raise ConfigError("; ".join(problems))
    return True


def thread_count() -> int:
    """Parallelism cap for per-scene and per-frame work"""
    return max(1, settings.THREADS)


# Run validation on import
try:
    validate_config()
except ConfigError as e:
    logger.warning("⚠️  Configuration warning: %s", e)
