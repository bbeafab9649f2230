from typing import Dict, Iterable, List, Optional, Tuple

import networkx as nx
from pydantic import BaseModel, Field

from routine.models import RoutineDag
from sched.models import Timelines

_EPS = 1e-9


class SerialEquivalence(BaseModel):
    ok: bool
    order: List[str] = Field(default_factory=list, description="Witness serial order when ok")
    cycle: List[Tuple[str, str]] = Field(default_factory=list, description="Violating routine cycle otherwise")


def verify_safety(timelines: Timelines) -> bool:
    """True iff no device holds two overlapping slots."""
    for timeline in timelines:
        ordered = sorted(timeline.slots, key=lambda s: s.start)
        for first, second in zip(ordered, ordered[1:]):
            if second.start < first.end - _EPS:
                return False
    return True


def conflict_graph(timelines: Timelines) -> nx.DiGraph:
    """Routine precedence implied by consecutive slots on each device."""
    graph = nx.DiGraph()
    for timeline in timelines:
        sequence = timeline.routine_sequence()
        graph.add_nodes_from(sequence)
        graph.add_edges_from((a, b) for a, b in zip(sequence, sequence[1:]) if a != b)
    return graph


def verify_serial_equivalence(
    timelines: Timelines, routines: Optional[Iterable[RoutineDag]] = None
) -> SerialEquivalence:
    """Witness order if the per-device sequences match some serial execution.

    Ties between unrelated routines are broken by (arrival, id) when the
    routines are given, by id otherwise.
    """
    graph = conflict_graph(timelines)
    rank: Dict[str, Tuple[float, str]] = {}
    for dag in routines or ():
        graph.add_node(dag.id)
        rank[dag.id] = (dag.arrival, dag.id)
    try:
        cycle = nx.find_cycle(graph)
        return SerialEquivalence(ok=False, cycle=[(u, v) for u, v in cycle])
    except nx.NetworkXNoCycle:
        pass
    order = list(nx.lexicographical_topological_sort(graph, key=lambda r: rank.get(r, (0.0, r))))
    return SerialEquivalence(ok=True, order=order)


def serial_sequences(timelines: Timelines, order: List[str]) -> Dict[str, List[Tuple[str, str]]]:
    """Per-device action sequences if whole routines ran one after another in `order`."""
    position = {r: i for i, r in enumerate(order)}
    sequences: Dict[str, List[Tuple[str, str]]] = {}
    for timeline in timelines:
        ordered = sorted(timeline.slots, key=lambda s: (position[s.routine_id], s.start))
        sequences[timeline.device_id] = [s.key for s in ordered]
    return sequences


def device_sequences(timelines: Timelines) -> Dict[str, List[Tuple[str, str]]]:
    return {t.device_id: [s.key for s in sorted(t.slots, key=lambda s: s.start)] for t in timelines}
