from typing import Dict, Iterable, Mapping, Set

from lifecycle.models import EventKind
from routine.models import DependencyEdge, RoutineDag

TERMINAL_EVENTS = (EventKind.COMPLETE, EventKind.FAILURE)
FiredEvents = Mapping[str, Iterable[EventKind]]


def _fired(fired_events: FiredEvents, action_id: str) -> Set[EventKind]:
    return set(fired_events.get(action_id, ()))


def _skipped(dag: RoutineDag, fired_events: FiredEvents, action_id: str) -> bool:
    """A fallback whose failure-parent completed will never run."""
    return any(
        EventKind.COMPLETE in _fired(fired_events, e.parent)
        for e in dag.parents(action_id)
        if e.on == EventKind.FAILURE
    )


def _waived(dag: RoutineDag, fired_events: FiredEvents, edge: DependencyEdge) -> bool:
    """Edges between exclusive alternatives stop counting once one side is decided.

    An edge out of a skipped fallback is waived, and so is an edge out of a
    failed parent when the child also waits on one of that parent's fallbacks.
    """
    if edge.on == EventKind.FAILURE:
        return False
    if _skipped(dag, fired_events, edge.parent):
        return True
    if EventKind.FAILURE in _fired(fired_events, edge.parent):
        fallbacks = {e.child for e in dag.children(edge.parent) if e.on == EventKind.FAILURE}
        return any(e.parent in fallbacks for e in dag.parents(edge.child))
    return False


def _satisfied(fired_events: FiredEvents, edge: DependencyEdge) -> bool:
    return edge.on in _fired(fired_events, edge.parent)


def ready_children(dag: RoutineDag, fired_events: FiredEvents, dispatched: Iterable[str] = ()) -> Set[str]:
    """Actions whose dependencies are met by `fired_events` and that have not fired yet."""
    done = set(dispatched) | {a for a, kinds in fired_events.items() if kinds}
    ready: Set[str] = set()
    for spec in dag.actions:
        node = spec.id
        if node in done:
            continue
        edges = dag.parents(node)
        if not edges:
            ready.add(node)
            continue
        live = [e for e in edges if not _waived(dag, fired_events, e)]
        if live and all(_satisfied(fired_events, e) for e in live):
            ready.add(node)
    return ready


def blocked_actions(dag: RoutineDag, fired_events: FiredEvents) -> Set[str]:
    """Actions that can no longer become ready whatever happens next.

    An action whose every incoming edge is waived is dead too, so blocking
    runs on through the descendants of a skipped fallback.
    """
    dead: Set[str] = set()
    for node in dag.topological_order():
        if _fired(fired_events, node):
            continue
        edges = dag.parents(node)
        live = [e for e in edges if not _waived(dag, fired_events, e)]
        if edges and not live:
            dead.add(node)
            continue
        for edge in live:
            parent_events = _fired(fired_events, edge.parent)
            if edge.parent in dead:
                dead.add(node)
            elif edge.on == EventKind.FAILURE and EventKind.COMPLETE in parent_events:
                dead.add(node)
            elif EventKind.FAILURE in parent_events and edge.on not in parent_events:
                dead.add(node)
            if node in dead:
                break
    return dead


class RoutineRun:
    """Firing state of one routine execution, owned by the scheduler's event loop."""

    def __init__(self, dag: RoutineDag):
        self.dag = dag
        self.events: Dict[str, Set[EventKind]] = {}
        self.dispatched: Set[str] = set()

    def record(self, action_id: str, kind: EventKind):
        self.events.setdefault(action_id, set()).add(kind)

    def dispatch(self, action_id: str):
        self.dispatched.add(action_id)

    def ready(self) -> Set[str]:
        return ready_children(self.dag, self.events, self.dispatched)

    def blocked(self) -> Set[str]:
        return blocked_actions(self.dag, self.events) - self.dispatched

    def terminal(self, action_id: str) -> bool:
        return bool(self.events.get(action_id, set()) & set(TERMINAL_EVENTS))

    def failed(self, action_id: str) -> bool:
        return EventKind.FAILURE in self.events.get(action_id, set())

    @property
    def finished(self) -> bool:
        blocked = self.blocked()
        return all(self.terminal(a.id) or a.id in blocked for a in self.dag.actions)
