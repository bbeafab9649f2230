import os
from functools import lru_cache
from typing import Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError

from lib.errors import ConfigError

load_dotenv()

# Detection tolerances per action class, seconds
DEFAULT_QW: Dict[str, float] = {
    "door": 2.0,
    "shade": 3.0,
    "thermostat": 30.0,
}
FALLBACK_QW = 5.0


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} is not a number: {raw!r}")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} is not an integer: {raw!r}")


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


class Settings(BaseModel):
    bin_count: int = Field(default=64, ge=1, description="Histogram bins per distribution")
    epsilon: float = Field(default=1e-5, gt=0, description="Terminal tolerance for the last poll")
    min_poll_interval: float = Field(default=1.0, gt=0, description="Device polling rate limit, seconds")
    slo: float = Field(default=0.9, gt=0, le=1, description="Fraction of events detected within Q_w")
    reactive_threshold: float = Field(default=1.0, ge=0, description="Early deviation threshold, seconds")
    proactive_fraction: float = Field(default=0.95, gt=0, le=1, description="Fraction of U before a late check")
    drift_window: int = Field(default=200, ge=1, description="Recent samples kept by the learner")
    drift_decay: float = Field(default=0.98, gt=0, le=1, description="Per-sample weight factor for history older than the window")
    min_training_samples: int = Field(default=3, ge=1)
    untrained_timeout: float = Field(default=600.0, gt=0, description="Failure bound while a key is untrained")
    network_delay: float = Field(default=0.0, ge=0)
    plan_workers: int = Field(default=4, ge=1)
    verbose: bool = False
    qw_overrides: Dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_env(cls) -> "Settings":
        try:
            return cls._read_env()
        except PydanticValidationError as e:
            raise ConfigError(f"Invalid RASC_* setting: {e.errors()[0]['msg']}")

    @classmethod
    def _read_env(cls) -> "Settings":
        return cls(
            bin_count=_env_int("RASC_BIN_COUNT", 64),
            epsilon=_env_float("RASC_EPSILON", 1e-5),
            min_poll_interval=_env_float("RASC_MIN_POLL_INTERVAL", 1.0),
            slo=_env_float("RASC_SLO", 0.9),
            reactive_threshold=_env_float("RASC_REACTIVE_THRESHOLD", 1.0),
            proactive_fraction=_env_float("RASC_PROACTIVE_FRACTION", 0.95),
            drift_window=_env_int("RASC_DRIFT_WINDOW", 200),
            drift_decay=_env_float("RASC_DRIFT_DECAY", 0.98),
            min_training_samples=_env_int("RASC_MIN_TRAINING_SAMPLES", 3),
            untrained_timeout=_env_float("RASC_UNTRAINED_TIMEOUT", 600.0),
            network_delay=_env_float("RASC_NETWORK_DELAY", 0.0),
            plan_workers=_env_int("RASC_PLAN_WORKERS", 4),
            verbose=_env_bool("RASC_VERBOSE", False),
        )

    def detection_tolerance(self, action_class: Optional[str]) -> float:
        """Q_w for an action class, overrides first."""
        if action_class and action_class in self.qw_overrides:
            return self.qw_overrides[action_class]
        if action_class and action_class in DEFAULT_QW:
            return DEFAULT_QW[action_class]
        return FALLBACK_QW


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings.from_env()
