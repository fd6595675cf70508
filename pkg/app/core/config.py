# app/core/config.py
# All engine defaults loaded from environment variables / .env file
# CLI flags and --config files override these; see app/main.py for the resolution order.

from functools import lru_cache
from pathlib import Path

from pydantic import AliasChoices, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Single source of truth for sslb defaults.
    pydantic-settings reads SSLB_-prefixed environment variables.
    Variable names are case-insensitive.
    """

    model_config = SettingsConfigDict(
        env_prefix="SSLB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    debug: bool = False

    # Output
    out_dir: Path = Field(
        default=Path("runs"),
        validation_alias=AliasChoices("out_dir", "SSLB_OUT_DIR"),
    )
    jobs: int = 1

    # Model / data
    image_size: int = 32
    total_sample: int = 204
    val_fraction: float = 0.30
    synthetic_per_class: int = 150
    synthetic_difficulty: float = 0.5

    # Training
    epochs: int = 50
    batch_size: int = 12
    lr: float = 1e-5
    weight_decay: float = 1e-4

    # MixMatch
    k: int = 2
    temperature: float = 0.5
    alpha: float = 0.75
    gamma: float = 100.0
    rampup: int = 3000

    # Experiment
    seeds: int = 10
    significance: float = 0.1

    @field_validator("debug", mode="before")
    @classmethod
    def parse_debug(cls, v):
        if isinstance(v, bool):
            return v
        text = str(v or "").strip().lower()
        if text in {"1", "true", "yes", "y", "on", "debug"}:
            return True
        if text in {"0", "false", "no", "n", "off", "release", "prod", "production", ""}:
            return False
        raise ValueError("DEBUG must be a boolean-like value (true/false).")

    @field_validator("jobs", "image_size", "epochs", "batch_size", "seeds")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v


@lru_cache
def get_settings() -> Settings:
    """
    Returns a cached Settings instance.
    Import directly in most places: from app.core.config import settings
    """
    return Settings()


# Module-level singleton -- import this directly in most places
settings = get_settings()
