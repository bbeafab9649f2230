import json
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, field_validator, model_validator

from lib.errors import ConfigError
from lifecycle.models import PollingPolicy
from sim.models import DeviceSpec, PolicyConfig, SchedulerKind

_PATH_FIELDS = ("workload", "devices", "traces")


class PolicyChoice(BaseModel):
    polling: PollingPolicy = PollingPolicy.ADAPTIVE
    scheduler: SchedulerKind = SchedulerKind.DAGTL_STF

    @property
    def slug(self) -> str:
        return f"{self.polling.value}_{self.scheduler.value}"


class ExperimentConfig(BaseModel):
    """One `run` invocation: a workload, its devices and the policy x seed grid."""

    name: str
    workload: Path
    devices: Path
    traces: Optional[Path] = Field(default=None, description="Training CSV; the corpus is sampled when omitted")
    policies: List[PolicyChoice] = Field(default_factory=lambda: [PolicyChoice()])
    qw: Dict[str, float] = Field(default_factory=dict, description="Q_w per action class, seconds")
    slo: float = Field(default=0.9, gt=0, le=1)
    seeds: List[int]
    network_delay: float = Field(default=0.0, ge=0)
    duration_noise: float = Field(default=0.0, ge=0, lt=1)

    @field_validator("seeds")
    @classmethod
    def _seeds_present(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("seeds must not be empty")
        return seeds

    @field_validator("policies")
    @classmethod
    def _policies_present(cls, policies: List[PolicyChoice]) -> List[PolicyChoice]:
        if not policies:
            raise ValueError("policies must not be empty")
        return policies

    @field_validator("qw")
    @classmethod
    def _positive_tolerances(cls, qw: Dict[str, float]) -> Dict[str, float]:
        bad = sorted(k for k, v in qw.items() if not v > 0)
        if bad:
            raise ValueError(f"Q_w must be positive for: {', '.join(bad)}")
        return qw

    @model_validator(mode="after")
    def _files_exist(self):
        for name in _PATH_FIELDS:
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise ValueError(f"{name} file not found: {path}")
        return self

    def policy_config(self, choice: PolicyChoice) -> PolicyConfig:
        return PolicyConfig(
            polling=choice.polling,
            scheduler=choice.scheduler,
            slo=self.slo,
            qw_overrides=dict(self.qw),
            network_delay=self.network_delay,
            duration_noise=self.duration_noise,
        )


def _first_error(e: PydanticValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err["loc"])
    return f"{where}: {err['msg']}" if where else err["msg"]


def load_experiment_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a JSON config; relative file paths resolve against the config's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    for name in _PATH_FIELDS:
        value = document.get(name)
        if isinstance(value, str) and not Path(value).is_absolute():
            document[name] = str(path.parent / value)
    for key, value in (overrides or {}).items():
        if key == "qw":
            document["qw"] = {**document.get("qw", {}), **value}
        else:
            document[key] = value
    try:
        return ExperimentConfig(**document)
    except PydanticValidationError as e:
        raise ConfigError(f"Invalid experiment config {path}: {_first_error(e)}")


def load_devices(path) -> List[DeviceSpec]:
    """Device file: a JSON list of device specs, or `{"devices": [...]}`."""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Device file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    entries = document.get("devices") if isinstance(document, dict) else document
    if not isinstance(entries, list):
        raise ConfigError(f"{path} must hold a list of devices")
    devices = []
    for position, entry in enumerate(entries):
        try:
            devices.append(DeviceSpec(**entry))
        except (PydanticValidationError, TypeError) as e:
            detail = _first_error(e) if isinstance(e, PydanticValidationError) else str(e)
            raise ConfigError(f"Device #{position} in {path} is invalid: {detail}")
    return devices


def parse_qw(pairs: Optional[List[str]]) -> Dict[str, float]:
    """`--qw door=2 --qw shade=3` into a map."""
    overrides: Dict[str, float] = {}
    for pair in pairs or []:
        name, sep, raw = pair.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"--qw expects action_class=seconds, got {pair!r}")
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"--qw value for {name.strip()} is not a number: {raw!r}")
        if not value > 0:
            raise ConfigError(f"--qw value for {name.strip()} must be positive")
        overrides[name.strip()] = value
    return overrides
