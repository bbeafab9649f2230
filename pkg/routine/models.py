from functools import cached_property
from typing import Any, Dict, List, Optional, Set, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lifecycle.models import EventKind


class ActionSpec(BaseModel):
    """One device action inside a routine."""

    model_config = ConfigDict(frozen=True)

    id: str
    device: str
    action: str
    params: Dict[str, Any] = Field(default_factory=dict)
    length: float = Field(default=1.0, gt=0, description="Estimated request-to-complete seconds")
    start_offset: float = Field(default=0.0, ge=0, description="Estimated request-to-start seconds")


class DependencyEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    parent: str
    child: str
    on: EventKind = EventKind.COMPLETE


def milestone_offset(spec: ActionSpec, on: EventKind) -> float:
    """Seconds from an action's request to the milestone a child waits on."""
    if on == EventKind.ACK:
        return 0.0
    if on == EventKind.START:
        return min(spec.start_offset, spec.length)
    return spec.length


class RoutineDag(BaseModel):
    """A routine as a DAG of actions.

    Treated as immutable after parsing; per-run firing state lives in
    `routine.runstate.RoutineRun`. Validation errors surface as pydantic
    ValidationErrors; the parser rewraps them as RoutineParseError.
    """

    id: str
    alias: str = ""
    actions: List[ActionSpec]
    edges: List[DependencyEdge] = Field(default_factory=list)
    arrival: float = Field(default=0.0, ge=0)
    trigger: Optional[Any] = None

    @model_validator(mode="after")
    def _check_graph(self):
        if not self.actions:
            raise ValueError(f"Routine {self.id} has no actions")
        seen: Set[str] = set()
        for spec in self.actions:
            if spec.id in seen:
                raise ValueError(f"Routine {self.id}: duplicate action id {spec.id}")
            seen.add(spec.id)
        for edge in self.edges:
            for end in (edge.parent, edge.child):
                if end not in seen:
                    raise ValueError(f"Routine {self.id}: edge refers to unknown action {end}")
            if edge.parent == edge.child:
                raise ValueError(f"Routine {self.id}: action {edge.parent} depends on itself")
        graph = nx.DiGraph([(e.parent, e.child) for e in self.edges])
        if not nx.is_directed_acyclic_graph(graph):
            cycle = " -> ".join(u for u, _ in nx.find_cycle(graph))
            raise ValueError(f"Routine {self.id} has a dependency cycle: {cycle}")
        return self

    # ---- Lookups ----
    @cached_property
    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(a.id for a in self.actions)
        graph.add_edges_from((e.parent, e.child) for e in self.edges)
        return graph

    @cached_property
    def action_index(self) -> Dict[str, int]:
        return {a.id: i for i, a in enumerate(self.actions)}

    def action(self, action_id: str) -> ActionSpec:
        return self.actions[self.action_index[action_id]]

    def position(self, action_id: str) -> int:
        return self.action_index[action_id]

    def parents(self, action_id: str) -> List[DependencyEdge]:
        return [e for e in self.edges if e.child == action_id]

    def children(self, action_id: str) -> List[DependencyEdge]:
        return [e for e in self.edges if e.parent == action_id]

    def roots(self) -> List[str]:
        return [a.id for a in self.actions if self.graph.in_degree(a.id) == 0]

    def descendants(self, action_id: str) -> Set[str]:
        return nx.descendants(self.graph, action_id)

    def devices(self) -> Set[str]:
        return {a.device for a in self.actions}

    def topological_order(self) -> List[str]:
        return list(nx.lexicographical_topological_sort(self.graph, key=self.position))

    def fallbacks(self) -> Set[str]:
        """Actions that run only when some parent fails."""
        return {e.child for e in self.edges if e.on == EventKind.FAILURE}

    def on_demand(self) -> Set[str]:
        """Fallbacks plus actions reachable only through them; left out of up-front placement."""
        excluded = set(self.fallbacks())
        for node in self.topological_order():
            parents = self.parents(node)
            if node not in excluded and parents and all(e.parent in excluded for e in parents):
                excluded.add(node)
        return excluded

    def with_arrival(self, arrival: float) -> "RoutineDag":
        return RoutineDag(
            id=self.id,
            alias=self.alias,
            actions=self.actions,
            edges=self.edges,
            arrival=arrival,
            trigger=self.trigger,
        )

    def with_estimates(self, estimates: Dict[str, Tuple[float, float]]) -> "RoutineDag":
        """Copy with (length, start_offset) replaced for the listed actions."""
        actions = [
            spec.model_copy(update={"length": estimates[spec.id][0], "start_offset": estimates[spec.id][1]})
            if spec.id in estimates
            else spec
            for spec in self.actions
        ]
        return RoutineDag(
            id=self.id,
            alias=self.alias,
            actions=actions,
            edges=self.edges,
            arrival=self.arrival,
            trigger=self.trigger,
        )

    def critical_path(self) -> float:
        """Longest milestone-respecting chain over the up-front actions, in estimated seconds."""
        skipped = self.on_demand()
        begin: Dict[str, float] = {}
        for node in self.topological_order():
            if node in skipped:
                continue
            begin[node] = max(
                [
                    begin[e.parent] + milestone_offset(self.action(e.parent), e.on)
                    for e in self.parents(node)
                    if e.parent not in skipped
                ],
                default=0.0,
            )
        return max(begin[n] + self.action(n).length for n in begin)
