"""
Environment configuration for CoopFlat
Values come from COOPFLAT_* environment variables (a .env file is loaded by main)
"""

from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="COOPFLAT_", extra="ignore")

    log_level: str = "INFO"
    log_file: Optional[str] = "logs/coopflat.log"
    data_dir: Path = Path("data/mnist")
    cache_dir: Optional[Path] = Path(".cache")
    mnist_mirror: str = "https://ossci-datasets.s3.amazonaws.com/mnist/"
    download_timeout: float = Field(60.0, gt=0)
    output_dir: Path = Path("runs")


@lru_cache
def get_settings() -> Settings:
    return Settings()
