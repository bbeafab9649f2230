"""Routine schedulers the simulator can drive.

A scheduler only gates dispatch: the engine offers each ready action whose
device is idle, and `admit` answers yes or no.
"""

from typing import TYPE_CHECKING, Dict, Iterable, List, Optional

from lib import console
from lib.errors import ScheduleConsistencyError
from lifecycle.models import EventKind
from resched.models import Deviation, DeviationKind
from resched.trigger import DeviationMonitor, Rescheduler
from routine.runstate import TERMINAL_EVENTS, RoutineRun
from sched.dagtl import place_on_demand, schedule_routine
from sched.models import Placement, SerializationOrder, Slot, SlotKey, Timelines
from sim.models import SchedulerKind

if TYPE_CHECKING:
    from sim.engine import Simulation

_EPS = 1e-9


class SchedulerPolicy:
    name = "greedy"

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    def on_arrival(self, run: RoutineRun, now: float):
        pass

    def admit(self, run: RoutineRun, action_id: str, now: float) -> bool:
        return True

    def on_dispatch(self, run: RoutineRun, action_id: str, now: float):
        pass

    def on_progress(self, run: RoutineRun, action_id: str, kind: EventKind, now: float):
        pass

    def on_blocked(self, run: RoutineRun, action_ids: Iterable[str]):
        pass

    def on_finished(self, run: RoutineRun, now: float):
        pass

    def on_overrun(self, key: SlotKey, now: float):
        pass


class FcfsScheduler(SchedulerPolicy):
    """Whole routines, one at a time, in arrival order."""

    name = "fcfs"

    def admit(self, run: RoutineRun, action_id: str, now: float) -> bool:
        return self.sim.active_runs()[0] is run


class FcfsPostScheduler(SchedulerPolicy):
    """A routine may run once every earlier routine is done on the devices they share."""

    name = "fcfs_post"

    def admit(self, run: RoutineRun, action_id: str, now: float) -> bool:
        mine = run.dag.devices()
        for earlier in self.sim.active_runs():
            if earlier is run:
                break
            if any(self.sim.pending_on(earlier, d) for d in sorted(mine & earlier.dag.devices())):
                return False
        return True


class JitScheduler(SchedulerPolicy):
    """Greedy device locking.

    A routine locks a device just before its first action there and holds the
    lock until the routine finishes. It takes its place in the order at first
    device contact, and never takes a device that a routine ahead of it still
    needs, so every wait points at an earlier routine.
    """

    name = "jit"

    def __init__(self, sim: "Simulation"):
        super().__init__(sim)
        self.contact: List[str] = []
        self.locks: Dict[str, str] = {}

    def admit(self, run: RoutineRun, action_id: str, now: float) -> bool:
        rid = run.dag.id
        device = run.dag.action(action_id).device
        if self.locks.get(device, rid) != rid:
            return False
        ahead = self.contact[: self.contact.index(rid)] if rid in self.contact else self.contact
        for other in ahead:
            if self.sim.pending_on(self.sim.runs[other], device):
                return False
        return True

    def on_dispatch(self, run: RoutineRun, action_id: str, now: float):
        if run.dag.id not in self.contact:
            self.contact.append(run.dag.id)
        self.locks[run.dag.action(action_id).device] = run.dag.id

    def on_finished(self, run: RoutineRun, now: float):
        if run.dag.id in self.contact:
            self.contact.remove(run.dag.id)
        for device in [d for d, holder in self.locks.items() if holder == run.dag.id]:
            del self.locks[device]


class DagTlScheduler(SchedulerPolicy):
    """Timeline placement at arrival, slot-ordered dispatch, STF or RV on deviations."""

    def __init__(self, sim: "Simulation", policy: str = "stf"):
        super().__init__(sim)
        self.name = f"dagtl_{policy}"
        self.timelines = Timelines(sorted(sim.devices))
        self.order = SerializationOrder()
        self.rescheduler = Rescheduler(policy)
        self.monitor = DeviationMonitor(sim.config.reactive_threshold, sim.config.proactive_fraction)
        self.placements: Dict[str, Placement] = {}

    def _routines(self):
        return {rid: run.dag for rid, run in self.sim.runs.items()}

    def _arrivals(self):
        return {run.dag.id: run.dag.arrival for run in self.sim.active_runs()}

    def _head(self, device: str) -> Optional[Slot]:
        for slot in self.timelines.timeline(device).slots:
            if slot.key not in self.sim.dispatched:
                return slot
        return None

    def _reschedule(self, deviation: Deviation, now: float, trigger: str):
        try:
            impacted = self.rescheduler.handle(
                deviation,
                self.timelines,
                self.order,
                self._routines(),
                self._arrivals(),
                started=self.sim.dispatched,
                now=now,
                trigger=trigger,
            )
        except ScheduleConsistencyError as e:
            console.warn("dagtl", f"rescheduling skipped: {e}")
            return
        self.sim.trace.add(
            now,
            "reschedule",
            routine=deviation.routine_id,
            action=deviation.action_id,
            kind=deviation.kind.value,
            dt=round(deviation.dt, 6),
            impacted=impacted,
            trigger=trigger,
        )

    def on_arrival(self, run: RoutineRun, now: float):
        self.placements[run.dag.id] = schedule_routine(run.dag, self.timelines, self.order, now)

    def admit(self, run: RoutineRun, action_id: str, now: float) -> bool:
        key = (run.dag.id, action_id)
        if key not in self.timelines:
            place_on_demand(run.dag, action_id, self.timelines, self.order, now)
        slot = self.timelines.slot(key)
        head = self._head(slot.device)
        # the device head may start early: device order, and so the serial order, is unchanged
        return head is not None and head.key == key

    def on_dispatch(self, run: RoutineRun, action_id: str, now: float):
        key = (run.dag.id, action_id)
        slot = self.timelines.slot(key)
        late = now - slot.start
        if late < -_EPS:
            self.timelines.replace(slot.moved(now))
        if late > _EPS:
            moved = slot.moved(now)
            clear = all(
                s.key == key or s.end <= moved.start + _EPS or s.start >= moved.end - _EPS
                for s in self.timelines.timeline(slot.device).slots
            )
            if late > self.monitor.reactive_threshold or not clear:
                deviation = Deviation(
                    routine_id=key[0], action_id=key[1], kind=DeviationKind.LATE, dt=late, detected_at=now
                )
                self._reschedule(deviation, now, "dispatch")
                current = self.timelines.slot(key)
                if current.end > now + _EPS:
                    moved = current.model_copy(update={"start": now})
            self.timelines.replace(moved)
        slot = self.timelines.slot(key)
        bound = self.sim.upper_bound(run, action_id)
        self.sim.schedule(self.monitor.check_at(slot, bound), "overrun", key=key)

    def on_progress(self, run: RoutineRun, action_id: str, kind: EventKind, now: float):
        if kind not in TERMINAL_EVENTS:
            return
        slot = self.timelines.get((run.dag.id, action_id))
        if slot is None:
            return
        deviation = self.monitor.on_complete(slot, now)
        if deviation is not None:
            self._reschedule(deviation, now, "completion")
        elif now < slot.end - _EPS:
            self.timelines.replace(slot.model_copy(update={"end": max(now, slot.start + _EPS)}))

    def on_blocked(self, run: RoutineRun, action_ids: Iterable[str]):
        for action_id in sorted(action_ids):
            key = (run.dag.id, action_id)
            if key in self.timelines and key not in self.sim.dispatched:
                self.timelines.remove(key)

    def on_finished(self, run: RoutineRun, now: float):
        self.order.retire(run.dag.id)

    def on_overrun(self, key: SlotKey, now: float):
        run = self.sim.runs[key[0]]
        slot = self.timelines.get(key)
        if run.terminal(key[1]) or slot is None:
            return
        instance = self.sim.instances[key]
        deviation = self.monitor.on_overrun(
            slot, now, self.sim.upper_bound(run, key[1]), instance.Q_w, instance.last_progress
        )
        if deviation is not None:
            self._reschedule(deviation, now, "proactive")
        self.sim.schedule(now + instance.Q_w, "overrun", key=key)


def make_scheduler(kind: SchedulerKind, sim: "Simulation") -> SchedulerPolicy:
    if kind == SchedulerKind.DAGTL_STF:
        return DagTlScheduler(sim, "stf")
    if kind == SchedulerKind.DAGTL_RV:
        return DagTlScheduler(sim, "rv")
    if kind == SchedulerKind.FCFS:
        return FcfsScheduler(sim)
    if kind == SchedulerKind.FCFS_POST:
        return FcfsPostScheduler(sim)
    if kind == SchedulerKind.JIT:
        return JitScheduler(sim)
    raise ValueError(f"Unsupported scheduler: {kind}. Supported: {', '.join(k.value for k in SchedulerKind)}")


def baseline_schedulers() -> List[SchedulerKind]:
    return [SchedulerKind.FCFS, SchedulerKind.FCFS_POST, SchedulerKind.JIT]
