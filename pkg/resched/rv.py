"""Restriction-vector style rescheduling: push by the delay, then reclaim slack."""

from typing import Iterable, Mapping, Optional

from lifecycle.models import EventKind
from resched.models import Deviation, DeviationKind
from resched.preprocess import apply_to_slot
from routine.models import RoutineDag, milestone_offset
from sched.models import SlotKey, Timelines

_EPS = 1e-9


def push(timelines: Timelines, after: float, dt: float, started: Iterable[SlotKey], skip: Optional[SlotKey] = None):
    """Shift every not-yet-started slot starting at or after `after` by dt."""
    started = set(started)
    moving = [
        s for s in timelines.slots()
        if s.key not in started and s.key != skip and s.start >= after - _EPS
    ]
    for slot in moving:
        timelines.replace(slot.moved(slot.start + dt))


def reclaim(
    timelines: Timelines,
    routines: Mapping[str, RoutineDag],
    started: Iterable[SlotKey],
    now: float,
):
    """Pull each waiting slot back to max(now, parents' milestones, device predecessor's end).

    Slots are visited in start order and never pass their device
    predecessor, so every device keeps its sequence.
    """
    started = set(started)
    for slot in [s for s in timelines.slots() if s.key not in started and s.start > now - _EPS]:
        current = timelines.slot(slot.key)
        earliest = now
        dag = routines.get(current.routine_id)
        if dag is not None:
            for edge in dag.parents(current.action_id):
                parent_key = (current.routine_id, edge.parent)
                if edge.on == EventKind.FAILURE or parent_key not in timelines:
                    continue
                parent = timelines.slot(parent_key)
                offset = parent.length if edge.on == EventKind.COMPLETE else milestone_offset(dag.action(edge.parent), edge.on)
                earliest = max(earliest, parent.start + offset)
        sequence = timelines.timeline(current.device).slots
        index = sequence.index(current)
        if index > 0:
            earliest = max(earliest, sequence[index - 1].end)
        if earliest < current.start - _EPS:
            timelines.replace(current.moved(earliest))


def reschedule_rv(
    deviation: Deviation,
    timelines: Timelines,
    routines: Mapping[str, RoutineDag],
    started: Iterable[SlotKey] = (),
    now: float = 0.0,
) -> Timelines:
    """Late: push everything after the deviating action by dt, then reclaim. Early: reclaim only."""
    if abs(deviation.dt) <= _EPS:
        return timelines
    started = set(started)
    origin = timelines.slot(deviation.key)
    apply_to_slot(deviation, timelines)
    if deviation.kind == DeviationKind.LATE and deviation.dt > 0:
        push(timelines, origin.start, deviation.dt, started, skip=deviation.key)
    reclaim(timelines, routines, started | {deviation.key}, now)
    return timelines
