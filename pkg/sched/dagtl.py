"""DAG-TL: timeline placement of arriving routines with whole-DAG backtracking.

Actions are placed breadth-first into the earliest device gaps that respect
their intra-routine milestone edges. Each placement is checked against the
serialization order; on a conflict the whole routine is lifted off the
timelines and shifted past the latest end, on its devices, of every routine
caught between its preceding and following sets.
"""

from typing import Dict, Iterator, List, Optional, Set, Tuple

import networkx as nx

from lib import console
from lib.errors import ScheduleConsistencyError
from routine.models import RoutineDag, milestone_offset
from sched.models import Placement, SerializationOrder, Slot, Timelines

_EPS = 1e-9


def traversal_order(dag: RoutineDag) -> List[str]:
    """Up-front actions, breadth-first by dependency depth, document order within a level."""
    skipped = dag.on_demand()
    graph = dag.graph.subgraph(n for n in dag.graph if n not in skipped)
    order: List[str] = []
    for generation in nx.topological_generations(graph):
        order.extend(sorted(generation, key=dag.position))
    return order


def ready_time(dag: RoutineDag, action_id: str, placed: Dict[str, Slot], release: float) -> float:
    """Earliest start allowed by already placed parents' milestones."""
    t = release
    for edge in dag.parents(action_id):
        parent = placed.get(edge.parent)
        if parent is not None:
            t = max(t, parent.start + milestone_offset(dag.action(edge.parent), edge.on))
    return t


def _slot(dag: RoutineDag, action_id: str, start: float) -> Slot:
    spec = dag.action(action_id)
    return Slot(
        action_id=action_id,
        routine_id=dag.id,
        device=spec.device,
        start=start,
        end=start + spec.length,
        start_offset=min(spec.start_offset, spec.length),
    )


def relations(timelines: Timelines, routine_id: str, order: SerializationOrder) -> Tuple[Set[str], Set[str]]:
    """Ordered routines that precede / follow `routine_id` on some shared device."""
    preds: Set[str] = set()
    succs: Set[str] = set()
    active = set(order.order)
    for timeline in timelines:
        mine = [s for s in timeline.slots if s.routine_id == routine_id]
        if not mine:
            continue
        for other in timeline.slots:
            if other.routine_id == routine_id or other.routine_id not in active:
                continue
            for slot in mine:
                if other.end <= slot.start + _EPS:
                    preds.add(other.routine_id)
                else:
                    succs.add(other.routine_id)
    return preds, succs


def find_conflict(timelines: Timelines, routine_id: str, order: SerializationOrder) -> Optional[Set[str]]:
    """None if the routine's slots extend the order; otherwise the routines it must follow.

    The established order is a chain; the routine's device relations add
    edges into and out of it. A cycle means a conflict, and the routines
    that reach the new one (its preceding set, which then overlaps the
    following set) are the ones it has to be shifted past.
    """
    preds, succs = relations(timelines, routine_id, order)
    if routine_id not in order.order and (not preds or not succs):
        return None
    graph = nx.DiGraph()
    nx.add_path(graph, order.order)
    graph.add_edges_from((p, routine_id) for p in preds)
    graph.add_edges_from((routine_id, s) for s in succs)
    if nx.is_directed_acyclic_graph(graph):
        return None
    preceding = nx.ancestors(graph, routine_id)
    following = nx.descendants(graph, routine_id)
    return ((preceding & following) | preds) - {routine_id}


def _place_breadth_first(
    dag: RoutineDag, nodes: List[str], timelines: Timelines, order: SerializationOrder, release: float
) -> Tuple[Dict[str, Slot], Optional[Set[str]]]:
    placed: Dict[str, Slot] = {}
    for node in nodes:
        spec = dag.action(node)
        earliest = ready_time(dag, node, placed, release)
        start = timelines.timeline(spec.device).earliest_fit(earliest, spec.length)
        slot = _slot(dag, node, start)
        timelines.insert(slot)
        placed[node] = slot
        conflict = find_conflict(timelines, dag.id, order)
        if conflict:
            return placed, conflict
    return placed, None


def _lift(placed: Dict[str, Slot], timelines: Timelines):
    for slot in placed.values():
        timelines.remove(slot.key)


def _latest_end(timelines: Timelines, routines: Set[str], devices: Set[str]) -> float:
    return max(
        (s.end for s in timelines.slots() if s.routine_id in routines and s.device in devices),
        default=0.0,
    )


def commit(dag: RoutineDag, timelines: Timelines, order: SerializationOrder):
    """Insert the placed routine into the order and record postsets."""
    preds, succs = relations(timelines, dag.id, order)
    index = min((order.position(s) for s in succs), default=None)
    order.insert(dag.id, index)
    for p in preds:
        order.postsets.setdefault(p, set()).add(dag.id)
    order.postsets[dag.id] |= succs


def schedule_routine(
    dag: RoutineDag, timelines: Timelines, order: SerializationOrder, now: float
) -> Placement:
    """Place `dag` onto `timelines` and extend `order`; mutates both."""
    nodes = traversal_order(dag)
    devices = {dag.action(n).device for n in nodes}
    release = max(now, dag.arrival)
    must_follow: Set[str] = set()
    shifts = 0
    while True:
        placed, conflict = _place_breadth_first(dag, nodes, timelines, order, release)
        if conflict is None:
            break
        _lift(placed, timelines)
        must_follow |= conflict
        shifted = max(release, _latest_end(timelines, must_follow, devices))
        if shifted <= release + _EPS:
            must_follow |= set(order.order)
            shifted = max(release, _latest_end(timelines, must_follow, devices))
            if shifted <= release + _EPS:
                raise ScheduleConsistencyError(f"Routine {dag.id} cannot be placed without a conflict")
        console.info("dagtl", f"{dag.id}: conflict with {sorted(conflict)}, shifting to t={shifted:.2f}")
        release = shifted
        shifts += 1

    commit(dag, timelines, order)
    return Placement(
        routine_id=dag.id,
        slots=[placed[n] for n in nodes],
        release=release,
        shifts=shifts,
    )


def _candidates(dag: RoutineDag, node: str, timelines: Timelines, placed: Dict[str, Slot], release: float) -> Iterator[float]:
    """Gap starts on the node's device, earliest first, one per following slot."""
    spec = dag.action(node)
    timeline = timelines.timeline(spec.device)
    t = ready_time(dag, node, placed, release)
    while True:
        start = timeline.earliest_fit(t, spec.length)
        yield start
        later = [s.end for s in timeline.slots if s.start >= start + spec.length - _EPS]
        if not later:
            return
        t = min(later)


def schedule_routine_per_action(
    dag: RoutineDag, timelines: Timelines, order: SerializationOrder, now: float
) -> Placement:
    """Action-by-action backtracking over gaps; kept as a comparator for DAG-TL.

    Worst case is exponential in the number of actions.
    """
    nodes = traversal_order(dag)
    release = max(now, dag.arrival)
    placed: Dict[str, Slot] = {}
    attempts = 0

    def place(i: int) -> bool:
        nonlocal attempts
        if i == len(nodes):
            return True
        node = nodes[i]
        for start in _candidates(dag, node, timelines, placed, release):
            attempts += 1
            slot = _slot(dag, node, start)
            timelines.insert(slot)
            placed[node] = slot
            if find_conflict(timelines, dag.id, order) is None and place(i + 1):
                return True
            timelines.remove(slot.key)
            del placed[node]
        return False

    if not place(0):
        raise ScheduleConsistencyError(f"Routine {dag.id} has no conflict-free placement")
    commit(dag, timelines, order)
    return Placement(
        routine_id=dag.id,
        slots=[placed[n] for n in nodes],
        release=release,
        retries=attempts - len(nodes),
    )


def place_on_demand(
    dag: RoutineDag,
    action_id: str,
    timelines: Timelines,
    order: SerializationOrder,
    earliest: float,
) -> Slot:
    """Place a fallback (or an action behind one) once it becomes ready.

    Takes the first gap that keeps the order intact; if every gap conflicts
    the action goes after everything on its device and a warning is printed.
    """
    key = (dag.id, action_id)
    if key in timelines:
        timelines.remove(key)
    last: Optional[Slot] = None
    for start in _candidates(dag, action_id, timelines, {}, earliest):
        slot = _slot(dag, action_id, start)
        timelines.insert(slot)
        if find_conflict(timelines, dag.id, order) is None:
            return slot
        timelines.remove(slot.key)
        last = slot
    console.warn("dagtl", f"{dag.id}/{action_id}: no order-preserving gap, placing at t={last.start:.2f}")
    timelines.insert(last)
    return last
