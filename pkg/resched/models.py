import json
from enum import Enum
from typing import List, Set

from pydantic import BaseModel, ConfigDict, Field

from sched.models import SlotKey


class DeviationKind(str, Enum):
    EARLY = "early"
    LATE = "late"


class Deviation(BaseModel):
    model_config = ConfigDict(frozen=True)

    routine_id: str
    action_id: str
    kind: DeviationKind
    dt: float = Field(description="New estimated end minus scheduled end, seconds")
    detected_at: float

    @property
    def key(self) -> SlotKey:
        return (self.routine_id, self.action_id)


class ImpactedSet(BaseModel):
    actions: Set[SlotKey] = Field(default_factory=set)

    def __len__(self) -> int:
        return len(self.actions)

    def __contains__(self, key: SlotKey) -> bool:
        return key in self.actions


class RescheduleRecord(BaseModel):
    t: float
    trigger: str
    kind: str
    impacted: int
    policy: str
    elapsed_compute: float


class RescheduleAudit(BaseModel):
    records: List[RescheduleRecord] = Field(default_factory=list)

    def add(self, record: RescheduleRecord):
        self.records.append(record)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.model_dump(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")
