from typing import Dict, Iterable, Mapping, Optional, Set

from lib.errors import ScheduleConsistencyError
from resched.models import Deviation, ImpactedSet
from routine.models import RoutineDag
from sched.models import SerializationOrder, SlotKey, Timelines

_EPS = 1e-9


def impacted_set(
    deviation: Deviation,
    timelines: Timelines,
    routines: Mapping[str, RoutineDag],
    order: SerializationOrder,
    started: Iterable[SlotKey] = (),
) -> ImpactedSet:
    """Actions a deviation may move: DAG descendants, device successors, and every
    action of a routine serialized after the deviating one, shared device or not.

    Started actions and actions without a slot are never impacted.
    """
    started = set(started)
    routine_id, action_id = deviation.key
    origin = timelines.slot(deviation.key)
    found: Set[SlotKey] = set()

    for node in routines[routine_id].descendants(action_id):
        found.add((routine_id, node))
    for slot in timelines.timeline(origin.device).slots:
        if slot.start > origin.start + _EPS:
            found.add(slot.key)
    if routine_id in order.order:
        for later in order.after(routine_id):
            found.update(s.key for s in timelines.routine_slots(later))

    found.discard(deviation.key)
    return ImpactedSet(actions={k for k in found if k in timelines and k not in started})


def postsets_from_timelines(
    timelines: Timelines, active: Optional[Iterable[str]] = None, until: Optional[float] = None
) -> Dict[str, Set[str]]:
    """Routines observed after each routine on a shared device.

    With `until`, only slots that started before that time count (executed
    history); without it the whole committed timeline is read.
    """
    active = None if active is None else set(active)
    postsets: Dict[str, Set[str]] = {r: set() for r in active or ()}
    for timeline in timelines:
        seen: Set[str] = set()
        for slot in sorted(timeline.slots, key=lambda s: s.start):
            rid = slot.routine_id
            if active is not None and rid not in active:
                continue
            if until is not None and slot.start >= until:
                break
            postsets.setdefault(rid, set())
            for earlier in seen:
                if earlier != rid:
                    postsets[earlier].add(rid)
            seen.add(rid)
    return postsets


def freeze_order(postsets: Mapping[str, Iterable[str]], arrivals: Mapping[str, float]) -> SerializationOrder:
    """Peel routines with empty postsets off the back of the order, round by round.

    Each round's routines go in front of everything placed so far, sorted by
    arrival, so a routine always precedes the routines in its postset.
    """
    # postsets[r] holds the routines serialized after r: B in postsets[A] means A runs before B
    remaining = {r: set(members) & set(postsets) for r, members in postsets.items()}
    order = []
    while remaining:
        empty = sorted((r for r, members in remaining.items() if not members), key=lambda r: (arrivals.get(r, 0.0), r))
        if not empty:
            raise ScheduleConsistencyError(f"Cyclic postsets among {sorted(remaining)}")
        order = empty + order
        for r in empty:
            del remaining[r]
        for members in remaining.values():
            members.difference_update(empty)
    return SerializationOrder(order=order, postsets={r: set(m) for r, m in postsets.items()})


def apply_to_slot(deviation: Deviation, timelines: Timelines):
    """Move the deviating action's estimated end by dt."""
    slot = timelines.slot(deviation.key)
    end = max(slot.start + _EPS, slot.end + deviation.dt)
    timelines.replace(slot.model_copy(update={"end": end}))
