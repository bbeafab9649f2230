"""Routine documents <-> RoutineDag.

Two equivalent document forms are accepted:

explicit form
    {"id", "alias", "actions": [{"id", "device", "action", "params",
     "after": [{"action_id", "on"}]}]}
    `after` absent means a Complete edge from the previously listed action.

step form
    {"id", "alias", "steps": [step | {"parallel": [step, ...]}]}
    Each step depends on every action of the previous step; `depend_on`
    lists one event per parent, in the parents' order, defaulting to
    complete.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from pydantic import ValidationError as PydanticValidationError

from lib.errors import RoutineParseError
from lifecycle.models import EventKind
from routine.models import ActionSpec, DependencyEdge, RoutineDag

EVENT_NAMES = {kind.value: kind for kind in EventKind}
_SPEC_FIELDS = ("device", "action", "params", "length", "start_offset")


def _event(name: Any, routine_id: str) -> EventKind:
    if not isinstance(name, str) or name.lower() not in EVENT_NAMES:
        raise RoutineParseError(
            f"Routine {routine_id}: unknown event {name!r}. Supported: {', '.join(EVENT_NAMES)}"
        )
    return EVENT_NAMES[name.lower()]


def _spec(entry: Dict[str, Any], default_id: str) -> ActionSpec:
    fields = {k: entry[k] for k in _SPEC_FIELDS if k in entry}
    return ActionSpec(id=str(entry.get("id", default_id)), **fields)


def _explicit_form(routine_id: str, entries: List[Dict[str, Any]]) -> Tuple[List[ActionSpec], List[DependencyEdge]]:
    actions, edges = [], []
    for position, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise RoutineParseError(f"Routine {routine_id}: action #{position} is not an object")
        spec = _spec(entry, f"a{position + 1}")
        actions.append(spec)
        if "after" not in entry:
            if actions[:-1]:
                edges.append(DependencyEdge(parent=actions[-2].id, child=spec.id))
            continue
        for dep in entry["after"] or []:
            if isinstance(dep, str):
                dep = {"action_id": dep}
            if "action_id" not in dep:
                raise RoutineParseError(f"Routine {routine_id}: dependency of {spec.id} lacks action_id")
            edges.append(
                DependencyEdge(
                    parent=str(dep["action_id"]),
                    child=spec.id,
                    on=_event(dep.get("on", "complete"), routine_id),
                )
            )
    return actions, edges


def _step_form(routine_id: str, steps: List[Any]) -> Tuple[List[ActionSpec], List[DependencyEdge]]:
    actions: List[ActionSpec] = []
    edges: List[DependencyEdge] = []
    previous: List[str] = []
    for step in steps:
        members = step["parallel"] if isinstance(step, dict) and "parallel" in step else [step]
        current: List[str] = []
        for member in members:
            if not isinstance(member, dict):
                raise RoutineParseError(f"Routine {routine_id}: step {member!r} is not an object")
            spec = _spec(member, f"a{len(actions) + 1}")
            actions.append(spec)
            current.append(spec.id)
            events = member.get("depend_on")
            if events is None:
                events = ["complete"] * len(previous)
            if len(events) != len(previous):
                raise RoutineParseError(
                    f"Routine {routine_id}: {spec.id} lists {len(events)} depend_on events "
                    f"for {len(previous)} parents"
                )
            for parent, name in zip(previous, events):
                edges.append(DependencyEdge(parent=parent, child=spec.id, on=_event(name, routine_id)))
        previous = current
    return actions, edges


def parse_routine(document: Union[str, Dict[str, Any]]) -> RoutineDag:
    """Build a RoutineDag from a JSON document (text or already decoded)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise RoutineParseError(f"Routine document is not valid JSON: {e}")
    if not isinstance(document, dict) or "id" not in document:
        raise RoutineParseError("Routine document must be an object with an id")
    routine_id = str(document["id"])
    try:
        if "actions" in document:
            actions, edges = _explicit_form(routine_id, document["actions"])
        elif "steps" in document:
            actions, edges = _step_form(routine_id, document["steps"])
        else:
            raise RoutineParseError(f"Routine {routine_id} has neither actions nor steps")
        return RoutineDag(
            id=routine_id,
            alias=str(document.get("alias", "")),
            actions=actions,
            edges=edges,
            arrival=float(document.get("arrival", 0.0)),
            trigger=document.get("trigger"),
        )
    except PydanticValidationError as e:
        problems = "; ".join(err["msg"] for err in e.errors())
        raise RoutineParseError(f"Routine {routine_id} is invalid: {problems}")


def serialize_routine(dag: RoutineDag) -> Dict[str, Any]:
    """Explicit-form document; every edge is written out."""
    actions = []
    for spec in dag.actions:
        entry = spec.model_dump()
        entry["after"] = [{"action_id": e.parent, "on": e.on.value} for e in dag.parents(spec.id)]
        actions.append(entry)
    document = {"id": dag.id, "alias": dag.alias, "arrival": dag.arrival, "actions": actions}
    if dag.trigger is not None:
        document["trigger"] = dag.trigger
    return document


def load_routine(path) -> RoutineDag:
    return parse_routine(Path(path).read_text(encoding="utf-8"))


def load_workload(path) -> List[RoutineDag]:
    """Read `{routines: [{routine: <document or file name>, arrival}]}` sorted by (arrival, id)."""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise RoutineParseError(f"Workload {path} is not valid JSON: {e}")
    routines: List[RoutineDag] = []
    for position, entry in enumerate(document.get("routines", [])):
        body = entry.get("routine")
        if isinstance(body, str):
            dag = load_routine(path.parent / body)
        elif isinstance(body, dict):
            dag = parse_routine(body)
        else:
            raise RoutineParseError(f"Workload entry #{position} has no routine")
        if "id" in entry:
            dag = dag.model_copy(update={"id": str(entry["id"])})
        routines.append(dag.with_arrival(float(entry.get("arrival", dag.arrival))))
    ids = [r.id for r in routines]
    if len(ids) != len(set(ids)):
        raise RoutineParseError(f"Workload {path} repeats routine ids")
    return sorted(routines, key=lambda r: (r.arrival, r.id))
