import itertools
import json
from pathlib import Path

import pytest

from lib.errors import RoutineParseError
from lifecycle.models import EventKind
from routine.parser import load_workload, parse_routine, serialize_routine
from routine.runstate import RoutineRun, blocked_actions, ready_children

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

C, S, F = EventKind.COMPLETE, EventKind.START, EventKind.FAILURE


def _edges(dag):
    return {(e.parent, e.child, e.on) for e in dag.edges}


def _garage():
    """Open, then unlock with a retry fallback; the shade waits on whichever unlock ran."""
    return parse_routine(
        {
            "id": "garage",
            "actions": [
                {"id": "open", "device": "door_0", "action": "open"},
                {"id": "lock", "device": "lock_4", "action": "lock", "after": [{"action_id": "open", "on": "start"}]},
                {"id": "unlock", "device": "lock_4", "action": "unlock", "after": ["open"]},
                {"id": "retry", "device": "lock_4", "action": "unlock", "after": [{"action_id": "unlock", "on": "failure"}]},
                {"id": "shade", "device": "shade_1", "action": "up", "after": ["unlock", "retry"]},
            ],
        }
    )


def _relay():
    """A fallback with a chain of its own: nothing but the fallback leads to `notify` and `log`."""
    return parse_routine(
        {
            "id": "relay",
            "actions": [
                {"id": "heat", "device": "thermostat_2", "action": "set"},
                {"id": "fan", "device": "fan_5", "action": "on", "after": [{"action_id": "heat", "on": "failure"}]},
                {"id": "notify", "device": "speaker_6", "action": "say", "after": ["fan"]},
                {"id": "log", "device": "light_3", "action": "blink", "after": ["notify"]},
            ],
        }
    )


def test_depend_on_maps_events_to_parents_in_order():
    dag = parse_routine(
        {
            "id": "morning",
            "steps": [
                {"parallel": [
                    {"id": "window", "device": "shade_1", "action": "up"},
                    {"id": "balcony", "device": "shade_2", "action": "up"},
                ]},
                {"id": "thermostat", "device": "thermostat_2", "action": "set", "depend_on": ["start", "complete"]},
            ],
        }
    )

    assert {(e.parent, e.on) for e in dag.parents("thermostat")} == {("window", S), ("balcony", C)}
    assert dag.roots() == ["window", "balcony"]


def test_sequential_steps_chain_on_complete():
    dag = parse_routine(
        {"id": "r", "steps": [{"device": "d1", "action": "x"}, {"device": "d2", "action": "y"}, {"device": "d3", "action": "z"}]}
    )

    assert _edges(dag) == {("a1", "a2", C), ("a2", "a3", C)}


def test_explicit_form_defaults_to_previous_action():
    dag = parse_routine(
        {"id": "r", "actions": [{"id": "p", "device": "d1", "action": "x"}, {"id": "q", "device": "d2", "action": "y"}]}
    )

    assert _edges(dag) == {("p", "q", C)}


def test_failure_edge_marks_fallback():
    dag = _garage()

    assert dag.fallbacks() == {"retry"}
    assert dag.on_demand() == {"retry"}
    assert {(e.parent, e.on) for e in dag.parents("shade")} == {("unlock", C), ("retry", C)}


@pytest.mark.parametrize(
    "document",
    [
        {"id": "r", "actions": [
            {"id": "a", "device": "d", "action": "x", "after": ["b"]},
            {"id": "b", "device": "d", "action": "x", "after": ["a"]},
        ]},
        {"id": "r", "steps": [
            {"device": "d", "action": "x"},
            {"device": "d", "action": "y", "depend_on": ["start", "complete"]},
        ]},
        {"id": "r", "actions": [
            {"id": "a", "device": "d", "action": "x"},
            {"id": "b", "device": "d", "action": "x", "after": [{"action_id": "a", "on": "finish"}]},
        ]},
        {"id": "r", "actions": [{"id": "a", "device": "d", "action": "x", "after": ["ghost"]}]},
        {"id": "r", "actions": []},
        {"id": "r"},
        "not json",
    ],
    ids=["cycle", "depend_on_arity", "unknown_event", "unknown_parent", "empty", "no_body", "bad_json"],
)
def test_parse_rejects(document):
    with pytest.raises(RoutineParseError):
        parse_routine(document)


def test_serialize_round_trip():
    for dag in (_garage(), parse_routine((DATA_DIR / "routines" / "leave_home.json").read_text())):
        again = parse_routine(json.dumps(serialize_routine(dag)))
        assert [a.id for a in again.actions] == [a.id for a in dag.actions]
        assert _edges(again) == _edges(dag)
        assert again.trigger == dag.trigger


def test_ready_children_basic():
    dag = _garage()

    assert ready_children(dag, {}) == {"open"}
    assert ready_children(dag, {"open": {S}}) == {"lock"}
    assert ready_children(dag, {"open": {S, C}}) == {"lock", "unlock"}
    assert ready_children(dag, {"open": {S, C}}, dispatched={"lock"}) == {"unlock"}


def test_child_waits_for_every_required_event():
    dag = parse_routine(
        {"id": "r", "steps": [
            {"parallel": [{"id": "p", "device": "d1", "action": "x"}, {"id": "q", "device": "d2", "action": "x"}]},
            {"id": "c", "device": "d3", "action": "x", "depend_on": ["start", "complete"]},
        ]}
    )

    assert "c" not in ready_children(dag, {"p": {S}, "q": {S}})
    assert "c" in ready_children(dag, {"p": {S}, "q": {S, C}})


def test_failure_fires_fallback_and_blocks_success_path():
    dag = _garage()
    fired = {"open": {S, C}, "lock": {S, C}, "unlock": {F}}

    assert ready_children(dag, fired) == {"retry"}
    assert "shade" not in blocked_actions(dag, fired)

    fired["retry"] = {S, C}
    assert ready_children(dag, fired) == {"shade"}


def test_success_skips_fallback():
    dag = _garage()
    fired = {"open": {S, C}, "lock": {S, C}, "unlock": {S, C}}

    assert ready_children(dag, fired) == {"shade"}
    assert blocked_actions(dag, fired) == {"retry"}


def test_failed_fallback_blocks_dependents():
    dag = _garage()
    fired = {"open": {S, C}, "lock": {S, C}, "unlock": {F}, "retry": {F}}

    assert ready_children(dag, fired) == set()
    assert blocked_actions(dag, fired) == {"shade"}


def test_skipped_fallback_blocks_its_own_chain():
    dag = _relay()
    run = RoutineRun(dag)
    run.dispatch("heat")
    run.record("heat", S)
    run.record("heat", C)

    assert run.ready() == set()
    assert run.blocked() == {"fan", "notify", "log"}
    assert run.finished


def test_fallback_chain_runs_after_failure():
    dag = _relay()
    fired = {"heat": {F}}

    assert ready_children(dag, fired) == {"fan"}
    assert blocked_actions(dag, fired) == set()

    fired["fan"] = {S, C}
    assert ready_children(dag, fired) == {"notify"}


def _drive(dag, outcomes):
    """Fire ready actions in id order until nothing is left; returns the run."""
    run = RoutineRun(dag)
    while True:
        ready = sorted(run.ready())
        if not ready:
            return run
        for action_id in ready:
            run.dispatch(action_id)
            if outcomes[action_id] == F:
                run.record(action_id, F)
            else:
                run.record(action_id, S)
                run.record(action_id, C)


@pytest.mark.parametrize("make_dag", [_garage, _relay], ids=["garage", "relay"])
def test_every_outcome_combination_fires_each_action_once_or_blocks_it(make_dag):
    dag = make_dag()
    ids = [a.id for a in dag.actions]
    for combo in itertools.product((C, F), repeat=len(ids)):
        run = _drive(dag, dict(zip(ids, combo)))
        fired = set(run.events)
        blocked = run.blocked()

        assert fired | blocked == set(ids)
        assert not fired & blocked
        assert run.finished


def test_fallback_and_success_path_never_both_fire():
    dag = _garage()
    ids = [a.id for a in dag.actions]
    for combo in itertools.product((C, F), repeat=len(ids)):
        run = _drive(dag, dict(zip(ids, combo)))
        fired = set(run.events)
        if "retry" in fired:
            assert run.failed("unlock")
        if "shade" in fired:
            assert run.terminal("unlock")
            assert not run.failed("unlock") or ("retry" in fired and not run.failed("retry"))


def test_co_action_is_not_rolled_back():
    dag = _garage()
    run = RoutineRun(dag)
    run.record("open", S)
    run.record("lock", S)
    run.record("lock", C)
    run.record("open", F)

    assert run.terminal("lock")
    assert run.blocked() >= {"unlock", "shade"}
    assert run.finished


def test_critical_path_uses_milestones():
    dag = parse_routine((DATA_DIR / "routines" / "leave_home.json").read_text())

    # light 1.5, then the thermostat's 432 s dominates
    assert dag.critical_path() == pytest.approx(433.5)
    assert dag.topological_order()[0] == "a1"


def test_load_workload_resolves_files_and_sorts():
    routines = load_workload(DATA_DIR / "workload.json")

    assert [r.id for r in routines] == ["leave_home", "garage_arrival", "garage_arrival_late"]
    assert [r.arrival for r in routines] == [0.0, 12.0, 520.0]
    assert routines[1].trigger["entity_id"] == "binary_sensor.garage_car"


def test_load_workload_rejects_repeated_ids(tmp_path):
    body = {"id": "r", "actions": [{"id": "a", "device": "d", "action": "x"}]}
    path = tmp_path / "workload.json"
    path.write_text(json.dumps({"routines": [{"routine": body}, {"routine": body, "arrival": 3}]}))

    with pytest.raises(RoutineParseError):
        load_workload(path)
