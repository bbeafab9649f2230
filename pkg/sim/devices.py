import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, Optional

from lifecycle.models import DeviceMode
from sched.models import SlotKey
from sim.models import BusyPolicy, DeviceSpec

_EPS = 1e-9


@dataclass
class Execution:
    """Physical run of one action. `stall` freezes progress at `stall_at` of the work."""

    key: SlotKey
    duration: float
    requested: float
    stall_at: Optional[float] = None
    stall: float = 0.0
    start: Optional[float] = None
    complete: Optional[float] = None

    @property
    def stalls(self) -> bool:
        return self.stall_at is not None and self.stall_at < 1.0 and self.stall > 0

    def begin(self, t: float):
        self.start = t
        self.complete = t + self.duration + (self.stall if self.stalls else 0.0)

    def progress(self, t: float) -> float:
        if self.start is None or t <= self.start:
            return 0.0
        if t >= self.complete:
            return 1.0
        active = t - self.start
        if self.stalls:
            pause = self.stall_at * self.duration
            if active > pause:
                active = max(pause, active - self.stall)
        return min(1.0, active / self.duration)

    def state(self, t: float) -> Dict[str, Any]:
        if self.start is None or t < self.start - _EPS:
            return {"phase": "requested", "progress": 0.0}
        if t >= self.complete - _EPS:
            return {"phase": "completed", "progress": 1.0}
        return {"phase": "started", "progress": round(self.progress(t), 6)}

    @property
    def finishes(self) -> bool:
        return self.complete is not None and math.isfinite(self.complete)


class VirtualDevice:
    """A device that runs one action at a time and rejects or queues the rest."""

    def __init__(self, spec: DeviceSpec):
        self.spec = spec
        self.current: Optional[Execution] = None
        self.queue: Deque[Execution] = deque()
        self.executions: Dict[SlotKey, Execution] = {}

    @property
    def device_id(self) -> str:
        return self.spec.device_id

    @property
    def mode(self) -> DeviceMode:
        return self.spec.mode

    @property
    def min_poll_interval(self) -> float:
        return self.spec.min_poll_interval

    @property
    def busy_policy(self) -> BusyPolicy:
        return self.spec.busy_policy

    @property
    def current_action(self) -> Optional[SlotKey]:
        return None if self.current is None else self.current.key

    def physical_progress(self, t: float) -> float:
        return 0.0 if self.current is None else self.current.progress(t)

    def request(self, execution: Execution, t: float) -> str:
        """"accepted" (started now), "queued" or "rejected"."""
        self.executions[execution.key] = execution
        if self.current is None:
            execution.begin(t)
            self.current = execution
            return "accepted"
        if self.busy_policy == BusyPolicy.QUEUE:
            self.queue.append(execution)
            return "queued"
        return "rejected"

    def release(self, t: float) -> Optional[Execution]:
        """Finish the current action; returns the queued one that starts now, if any."""
        self.current = None
        if not self.queue:
            return None
        upcoming = self.queue.popleft()
        upcoming.begin(t)
        self.current = upcoming
        return upcoming

    def observe(self, key: SlotKey, t: float) -> Dict[str, Any]:
        return self.executions[key].state(t)
