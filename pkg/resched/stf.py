"""Shortest Task First list scheduling with serialization edges."""

import heapq
from collections import defaultdict
from typing import Dict, List, Mapping, Set, Tuple

from lib.errors import ScheduleConsistencyError
from lifecycle.models import EventKind
from resched.models import ImpactedSet
from routine.models import RoutineDag, milestone_offset
from sched.models import SerializationOrder, Slot, SlotKey, Timelines

_EPS = 1e-9


def serialization_edges(slots: Mapping[SlotKey, Slot], order: SerializationOrder) -> List[Tuple[SlotKey, SlotKey]]:
    """Edges from the actions of R on d to those of R', for routines R < R' adjacent on d.

    Routine DAGs can leave several actions of one routine on a device
    unordered, so every action of R is tied to every action of R' rather
    than only last-to-first.
    """
    position = {r: i for i, r in enumerate(order.order)}
    by_device: Dict[str, Dict[str, List[Slot]]] = defaultdict(lambda: defaultdict(list))
    for slot in slots.values():
        by_device[slot.device][slot.routine_id].append(slot)
    edges: List[Tuple[SlotKey, SlotKey]] = []
    for groups in by_device.values():
        ranked = sorted(groups, key=lambda r: (position.get(r, len(position)), r))
        for first, second in zip(ranked, ranked[1:]):
            edges.extend((a.key, b.key) for a in groups[first] for b in groups[second])
    return edges


def reschedule_stf(
    impacted: ImpactedSet,
    timelines: Timelines,
    order: SerializationOrder,
    routines: Mapping[str, RoutineDag],
    now: float = 0.0,
) -> Timelines:
    """Deschedule the impacted actions and place them back shortest-first.

    Each action goes to max(EST, next_free[device]); ties on (start, length)
    fall to the routine's order position, then the action id.
    """
    slots = {key: timelines.remove(key) for key in sorted(impacted.actions)}
    if not slots:
        return timelines
    position = {r: i for i, r in enumerate(order.order)}

    # Phase 0/1: predecessors, in-degrees and earliest starts
    succ: Dict[SlotKey, List[Tuple[SlotKey, EventKind]]] = defaultdict(list)
    indeg: Dict[SlotKey, int] = {key: 0 for key in slots}
    est: Dict[SlotKey, float] = {key: now for key in slots}
    for key in slots:
        rid, aid = key
        dag = routines[rid]
        for edge in dag.parents(aid):
            if edge.on == EventKind.FAILURE:
                continue
            parent_key = (rid, edge.parent)
            if parent_key in slots:
                succ[parent_key].append((key, edge.on))
                indeg[key] += 1
            elif parent_key in timelines:
                parent = timelines.slot(parent_key)
                # a deviating parent's slot already carries its new end
                offset = parent.length if edge.on == EventKind.COMPLETE else milestone_offset(dag.action(edge.parent), edge.on)
                est[key] = max(est[key], parent.start + offset)
    for first, second in serialization_edges(slots, order):
        succ[first].append((second, EventKind.COMPLETE))
        indeg[second] += 1

    next_free = {d: max(now, timelines.timeline(d).next_free) for d in {s.device for s in slots.values()}}

    def entry(key: SlotKey) -> tuple:
        slot = slots[key]
        start = max(est[key], next_free[slot.device])
        return (start, slot.length, position.get(key[0], len(position)), key[1], key)

    ready = [entry(k) for k in slots if indeg[k] == 0]
    heapq.heapify(ready)
    placed: Set[SlotKey] = set()

    # Phase 2: list scheduling
    while ready:
        start, length, _, _, key = heapq.heappop(ready)
        slot = slots[key]
        if start < next_free[slot.device] - _EPS:
            # the device filled up since this entry was keyed
            heapq.heappush(ready, entry(key))
            continue
        moved = slot.moved(start)
        timelines.insert(moved)
        placed.add(key)
        next_free[slot.device] = moved.end
        rid = key[0]
        for child, on in succ[key]:
            indeg[child] -= 1
            if child[0] == rid and on != EventKind.COMPLETE:
                ready_at = moved.start + milestone_offset(routines[rid].action(key[1]), on)
            else:
                ready_at = moved.end
            est[child] = max(est[child], ready_at)
            if indeg[child] == 0:
                heapq.heappush(ready, entry(child))

    if len(placed) != len(slots):
        raise ScheduleConsistencyError(f"STF left {len(slots) - len(placed)} actions unplaced (cyclic constraints)")
    return timelines
