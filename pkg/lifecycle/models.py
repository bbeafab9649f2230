from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from durations.keys import Transition, TransitionKey
from pollplan.models import PollSchedule


class EventKind(str, Enum):
    ACK = "ack"
    START = "start"
    COMPLETE = "complete"
    FAILURE = "failure"


class ActionState(str, Enum):
    REQUESTED = "requested"
    ACK_WAIT = "ack_wait"
    START_DETECTION = "start_detection"
    COMPLETE_DETECTION = "complete_detection"
    COMPLETED = "completed"
    FAILED = "failed"


TERMINAL_STATES = (ActionState.COMPLETED, ActionState.FAILED)


class DeviceMode(str, Enum):
    PULL = "pull"
    PUSH = "push"


class PollingPolicy(str, Enum):
    ADAPTIVE = "adaptive"
    PERIODIC = "periodic"
    NONE = "none"


class ProgressEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    action_id: str
    kind: EventKind
    at: float


class FieldCondition(BaseModel):
    field: str
    op: Literal["eq", "ne", "ge", "le", "gt", "lt", "in"] = "eq"
    value: Any

    def holds(self, state: Dict[str, Any]) -> bool:
        if self.field not in state:
            return False
        observed = state[self.field]
        try:
            if self.op == "eq":
                return observed == self.value
            if self.op == "ne":
                return observed != self.value
            if self.op == "ge":
                return observed >= self.value
            if self.op == "le":
                return observed <= self.value
            if self.op == "gt":
                return observed > self.value
            if self.op == "lt":
                return observed < self.value
            return observed in self.value
        except TypeError:
            return False


class MilestoneMapping(BaseModel):
    """Start/complete predicates over a device's polled state fields."""

    start: List[FieldCondition] = Field(
        default_factory=lambda: [FieldCondition(field="phase", op="in", value=["started", "completed"])]
    )
    complete: List[FieldCondition] = Field(
        default_factory=lambda: [FieldCondition(field="phase", op="eq", value="completed")]
    )

    def started(self, state: Dict[str, Any]) -> bool:
        return all(c.holds(state) for c in self.start)

    def completed(self, state: Dict[str, Any]) -> bool:
        return all(c.holds(state) for c in self.complete)


class DeviceProfile(BaseModel):
    device_id: str
    action_class: str = Field(description="Class used for the default detection tolerance")
    mode: DeviceMode = DeviceMode.PULL
    min_poll_interval: float = Field(default=1.0, gt=0)
    milestones: MilestoneMapping = Field(default_factory=MilestoneMapping)
    progress_field: Optional[str] = Field(default="progress", description="State field carrying a 0..1 fraction")


class ActionInstance(BaseModel):
    id: str
    device_id: str
    action_kind: str
    routine_id: Optional[str] = None
    keys: Dict[Transition, TransitionKey]
    Q_w: float
    state: ActionState = ActionState.REQUESTED
    timestamps: Dict[str, float] = Field(default_factory=dict)
    polls_issued: int = 0
    extra_polls_beyond_u: int = 0
    next_poll_at: Optional[float] = None
    ack_deadline: Optional[float] = None
    failure_deadline: Optional[float] = None
    plan: Optional[PollSchedule] = None
    phase_anchor: Optional[float] = None
    last_progress: Optional[float] = None

    _backoff: Any = PrivateAttr(default=None)
    _last_poll_at: Optional[float] = PrivateAttr(default=None)

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    @property
    def horizon(self) -> Optional[float]:
        """Absolute time of the active plan's bound U."""
        if self.plan is None or self.phase_anchor is None:
            return None
        return self.phase_anchor + self.plan.U
