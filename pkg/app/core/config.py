from pydantic_settings import BaseSettings, SettingsConfigDict
import os
from dotenv import load_dotenv

# Load environment variables from .env
load_dotenv()


class Settings(BaseSettings):
    """
    Process-level settings: where runs and checkpoints go, how loud logging is,
    and the seed used when no experiment file provides one.
    Experiment parameters live in PipelineConfig (app/models/config.py).
    """
    model_config = SettingsConfigDict(env_prefix="OCCREID_", env_file=".env", case_sensitive=True, extra="ignore")

    # Output locations
    RUNS_DIR: str = os.getenv("OCCREID_RUNS_DIR", "runs")
    CHECKPOINT_DIR: str = os.getenv("OCCREID_CHECKPOINT_DIR", "checkpoints")

    # Logging
    LOG_LEVEL: str = os.getenv("OCCREID_LOG_LEVEL", "INFO")

    # Fallback seed
    SEED: int = int(os.getenv("OCCREID_SEED", "0"))

    @property
    def VERSION(self) -> str:
        from app.core.version import version_string
        return version_string()


settings = Settings()
