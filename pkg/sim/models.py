import hashlib
import json
import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from lifecycle.models import DeviceProfile, PollingPolicy
from routine.models import RoutineDag


class BusyPolicy(str, Enum):
    REJECT = "reject"
    QUEUE = "queue"


class SchedulerKind(str, Enum):
    DAGTL_STF = "dagtl_stf"
    DAGTL_RV = "dagtl_rv"
    FCFS = "fcfs"
    FCFS_POST = "fcfs_post"
    JIT = "jit"


class DeviceSpec(DeviceProfile):
    """A simulated device: the hub-side profile plus how it treats requests while busy."""

    busy_policy: BusyPolicy = BusyPolicy.REJECT


class Interruption(BaseModel):
    routine_id: str
    action_id: str
    at_fraction: float = Field(ge=0, description="Physical progress at which the action stalls")
    duration: float = Field(ge=0, description="Stall length in seconds; inf never resumes")


class WorkloadSpec(BaseModel):
    routines: List[RoutineDag] = Field(default_factory=list)
    arrival_process: Literal["random", "random_bursty"] = "random_bursty"
    horizon: float = Field(default=3600.0, gt=0)
    seed: int = 0
    burst_fraction: float = Field(default=0.5, ge=0, le=1)


class PolicyConfig(BaseModel):
    polling: PollingPolicy = PollingPolicy.ADAPTIVE
    scheduler: SchedulerKind = SchedulerKind.DAGTL_STF
    slo: float = Field(default=0.9, gt=0, le=1)
    qw_overrides: Dict[str, float] = Field(default_factory=dict, description="Q_w per action class")
    reactive_threshold: float = Field(default=1.0, ge=0)
    proactive_fraction: float = Field(default=0.95, gt=0, le=1)
    network_delay: float = Field(default=0.0, ge=0)
    duration_noise: float = Field(default=0.0, ge=0, lt=1, description="Uniform +/- fraction applied to sampled durations")
    duration_sd_scale: float = Field(default=1.0, ge=0, description="Scales ground-truth spread; 0 gives exact means")
    training_samples: int = Field(default=50, ge=0)
    untrained_timeout: float = Field(default=600.0, gt=0)
    learn: bool = False

    @property
    def name(self) -> str:
        return f"{self.polling.value}+{self.scheduler.value}"


class TraceEvent(BaseModel):
    t: float
    type: str
    payload: Dict[str, Any] = Field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"t": round(self.t, 6), "type": self.type, "payload": self.payload}, sort_keys=True)


class SimTrace(BaseModel):
    events: List[TraceEvent] = Field(default_factory=list)

    def add(self, t: float, type: str, **payload):
        self.events.append(TraceEvent(t=t, type=type, payload=payload))

    def of_type(self, type: str) -> List[TraceEvent]:
        return [e for e in self.events if e.type == type]

    def to_jsonl(self) -> str:
        lines = [e.to_json() for e in self.events]
        return "\n".join(lines) + ("\n" if lines else "")

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()


class MetricSummary(BaseModel):
    mean: float = 0.0
    q50: float = 0.0
    q95: float = 0.0
    count: int = 0

    @field_validator("mean", "q50", "q95")
    @classmethod
    def _finite(cls, value: float) -> float:
        return round(float(value), 6) if math.isfinite(value) else value


METRIC_NAMES = [
    "detection_time",
    "polls",
    "extra_polls_beyond_u",
    "false_positive_rate",
    "schedule_length",
    "wait_time",
    "idle_time",
    "latency",
    "parallelism",
]


class MetricsReport(BaseModel):
    policy: str = ""
    seed: int = 0
    detection_time: Optional[MetricSummary] = None
    polls: Optional[MetricSummary] = None
    extra_polls_beyond_u: Optional[MetricSummary] = None
    false_positive_rate: MetricSummary = Field(default_factory=MetricSummary)
    schedule_length: MetricSummary = Field(default_factory=MetricSummary)
    wait_time: MetricSummary = Field(default_factory=MetricSummary)
    idle_time: MetricSummary = Field(default_factory=MetricSummary)
    latency: MetricSummary = Field(default_factory=MetricSummary)
    parallelism: MetricSummary = Field(default_factory=MetricSummary)
    unfinished_routines: int = 0

    def metric(self, name: str) -> Optional[MetricSummary]:
        return getattr(self, name)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), sort_keys=True, indent=2)

    def csv_rows(self) -> List[List[str]]:
        rows = []
        for name in METRIC_NAMES:
            summary = self.metric(name)
            if summary is None:
                rows.append([self.policy, str(self.seed), name, "n/a", "n/a", "n/a"])
            else:
                rows.append([self.policy, str(self.seed), name, f"{summary.mean:.6f}", f"{summary.q50:.6f}", f"{summary.q95:.6f}"])
        return rows
