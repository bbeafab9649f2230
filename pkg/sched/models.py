import bisect
import json
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple

from pydantic import BaseModel, Field, model_validator

from lib.errors import ScheduleConsistencyError

SlotKey = Tuple[str, str]  # (routine_id, action_id)
_EPS = 1e-9


class Slot(BaseModel):
    action_id: str
    routine_id: str
    device: str
    start: float
    end: float
    start_offset: float = Field(default=0.0, ge=0, description="Request-to-start seconds within the slot")

    @model_validator(mode="after")
    def _positive(self):
        if not self.end > self.start:
            raise ValueError(f"Slot {self.routine_id}/{self.action_id} must end after it starts")
        return self

    @property
    def key(self) -> SlotKey:
        return (self.routine_id, self.action_id)

    @property
    def length(self) -> float:
        return self.end - self.start

    def moved(self, start: float, length: Optional[float] = None) -> "Slot":
        length = self.length if length is None else length
        return self.model_copy(update={"start": start, "end": start + length})


class DeviceTimeline(BaseModel):
    """Slots committed on one device, kept sorted by start."""

    device_id: str
    slots: List[Slot] = Field(default_factory=list)

    @property
    def next_free(self) -> float:
        return max((s.end for s in self.slots), default=0.0)

    def earliest_fit(self, ready: float, length: float) -> float:
        """Earliest t >= ready with [t, t + length) clear of every slot."""
        t = ready
        for slot in self.slots:
            if slot.end <= t + _EPS:
                continue
            if slot.start >= t + length - _EPS:
                break
            t = slot.end
        return t

    def fits(self, start: float, length: float) -> bool:
        return all(s.end <= start + _EPS or s.start >= start + length - _EPS for s in self.slots)

    def insert(self, slot: Slot):
        starts = [s.start for s in self.slots]
        self.slots.insert(bisect.bisect_right(starts, slot.start), slot)

    def remove(self, key: SlotKey) -> Slot:
        for i, slot in enumerate(self.slots):
            if slot.key == key:
                return self.slots.pop(i)
        raise KeyError(key)

    def routine_sequence(self) -> List[str]:
        """Routine ids in slot order, consecutive repeats collapsed."""
        sequence: List[str] = []
        for slot in self.slots:
            if not sequence or sequence[-1] != slot.routine_id:
                sequence.append(slot.routine_id)
        return sequence


class Timelines:
    """All device timelines plus a slot index. Owned by one scheduler loop."""

    def __init__(self, devices: Iterable[str] = ()):
        self._timelines: Dict[str, DeviceTimeline] = {}
        self._slots: Dict[SlotKey, Slot] = {}
        for device in devices:
            self.timeline(device)

    def timeline(self, device: str) -> DeviceTimeline:
        if device not in self._timelines:
            self._timelines[device] = DeviceTimeline(device_id=device)
        return self._timelines[device]

    def devices(self) -> List[str]:
        return sorted(self._timelines)

    def __iter__(self) -> Iterator[DeviceTimeline]:
        return iter(self._timelines[d] for d in self.devices())

    def __contains__(self, key: SlotKey) -> bool:
        return key in self._slots

    def __len__(self) -> int:
        return len(self._slots)

    def slot(self, key: SlotKey) -> Slot:
        return self._slots[key]

    def get(self, key: SlotKey) -> Optional[Slot]:
        return self._slots.get(key)

    def slots(self) -> List[Slot]:
        return sorted(self._slots.values(), key=lambda s: (s.start, s.device, s.routine_id, s.action_id))

    def routine_slots(self, routine_id: str) -> List[Slot]:
        return [s for s in self.slots() if s.routine_id == routine_id]

    def insert(self, slot: Slot):
        if slot.key in self._slots:
            raise ScheduleConsistencyError(f"Slot {slot.key} is already placed")
        self.timeline(slot.device).insert(slot)
        self._slots[slot.key] = slot

    def remove(self, key: SlotKey) -> Slot:
        slot = self._slots.pop(key)
        self.timeline(slot.device).remove(key)
        return slot

    def replace(self, slot: Slot):
        self.remove(slot.key)
        self.insert(slot)

    def copy(self) -> "Timelines":
        clone = Timelines(self._timelines)
        for slot in self._slots.values():
            clone.insert(slot.model_copy())
        return clone

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"device": s.device, "action": s.action_id, "routine": s.routine_id, "start": round(s.start, 6), "end": round(s.end, 6)},
                sort_keys=True,
            )
            for s in self.slots()
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def to_gantt_csv(self) -> str:
        rows = ["device,routine,action,start,end,duration"]
        for timeline in self:
            for s in timeline.slots:
                rows.append(f"{s.device},{s.routine_id},{s.action_id},{s.start:.6f},{s.end:.6f},{s.length:.6f}")
        return "\n".join(rows) + "\n"


class SerializationOrder(BaseModel):
    """Total order over active routines plus the observed postsets."""

    order: List[str] = Field(default_factory=list)
    postsets: Dict[str, Set[str]] = Field(default_factory=dict)

    def position(self, routine_id: str) -> int:
        return self.order.index(routine_id)

    def precedes(self, first: str, second: str) -> bool:
        return self.position(first) < self.position(second)

    def insert(self, routine_id: str, index: Optional[int] = None):
        if routine_id in self.order:
            raise ScheduleConsistencyError(f"Routine {routine_id} is already ordered")
        if index is None:
            self.order.append(routine_id)
        else:
            self.order.insert(index, routine_id)
        self.postsets.setdefault(routine_id, set())

    def after(self, routine_id: str) -> List[str]:
        return self.order[self.position(routine_id) + 1 :]

    def retire(self, routine_id: str):
        """Drop a finished routine from the active order."""
        if routine_id in self.order:
            self.order.remove(routine_id)
        self.postsets.pop(routine_id, None)
        for members in self.postsets.values():
            members.discard(routine_id)


class Placement(BaseModel):
    routine_id: str
    slots: List[Slot]
    release: float = Field(description="Earliest start the final placement was computed from")
    shifts: int = Field(default=0, description="Whole-DAG shifts taken")
    retries: int = Field(default=0, description="Rejected per-action candidates")

    @property
    def end(self) -> float:
        return max(s.end for s in self.slots) if self.slots else self.release
