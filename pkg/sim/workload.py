import json
from pathlib import Path
from typing import List, Sequence

import numpy as np

from lifecycle.models import EventKind
from routine.models import ActionSpec, DependencyEdge, RoutineDag
from routine.parser import serialize_routine
from sim.corpus import actions_for
from sim.models import DeviceSpec, WorkloadSpec

# Peak times as fractions of the horizon: morning, lunch, evening
BURST_CENTERS = (0.25, 0.5, 0.8)
BURST_SPREAD = 0.02


def arrival_times(n: int, process: str, horizon: float, rng: np.random.Generator, burst_fraction: float = 0.5) -> np.ndarray:
    """Sorted arrivals in [0, horizon].

    "random" is a Poisson process conditioned on n arrivals (uniform order
    statistics); "random_bursty" moves `burst_fraction` of them into three
    Gaussian bursts of equal size.
    """
    if n == 0:
        return np.empty(0)
    if process == "random":
        return np.sort(rng.uniform(0.0, horizon, size=n))
    if process != "random_bursty":
        raise ValueError(f"Unsupported arrival process: {process}. Supported: 'random', 'random_bursty'")
    bursty = int(round(burst_fraction * n))
    sizes = [bursty // 3 + (1 if i < bursty % 3 else 0) for i in range(3)]
    times = [rng.uniform(0.0, horizon, size=n - bursty)]
    for center, size in zip(BURST_CENTERS, sizes):
        times.append(rng.normal(center * horizon, BURST_SPREAD * horizon, size=size))
    return np.sort(np.clip(np.concatenate(times), 0.0, horizon))


def random_routine(
    routine_id: str,
    devices: Sequence[DeviceSpec],
    rng: np.random.Generator,
    max_actions: int = 4,
    arrival: float = 0.0,
) -> RoutineDag:
    """A routine over distinct devices: each action hangs off a random earlier one, on Complete or Start."""
    usable = [d for d in devices if actions_for(d.action_class)]
    count = int(rng.integers(1, min(max_actions, len(usable)) + 1))
    picked = rng.choice(len(usable), size=count, replace=False)
    actions: List[ActionSpec] = []
    edges: List[DependencyEdge] = []
    for i, index in enumerate(picked):
        device = usable[int(index)]
        choices = actions_for(device.action_class)
        law = choices[int(rng.integers(len(choices)))]
        action_id = f"a{i + 1}"
        actions.append(ActionSpec(id=action_id, device=device.device_id, action=law.action, length=law.mean))
        if i == 0:
            continue
        parent = int(rng.integers(i))
        on = EventKind.START if rng.random() < 0.2 else EventKind.COMPLETE
        edges.append(DependencyEdge(parent=f"a{parent + 1}", child=action_id, on=on))
        if i >= 2 and rng.random() < 0.2:
            other = int(rng.integers(i))
            if other != parent:
                edges.append(DependencyEdge(parent=f"a{other + 1}", child=action_id))
    return RoutineDag(id=routine_id, actions=actions, edges=edges, arrival=arrival)


def generate_workload(
    devices: Sequence[DeviceSpec],
    n_routines: int,
    arrival_process: str = "random_bursty",
    horizon: float = 3600.0,
    seed: int = 0,
    max_actions: int = 4,
    burst_fraction: float = 0.5,
) -> WorkloadSpec:
    rng = np.random.default_rng(seed)
    arrivals = arrival_times(n_routines, arrival_process, horizon, rng, burst_fraction)
    routines = [
        random_routine(f"r{i:03d}", devices, rng, max_actions, arrival=float(round(t, 3)))
        for i, t in enumerate(arrivals)
    ]
    return WorkloadSpec(
        routines=routines,
        arrival_process=arrival_process,
        horizon=horizon,
        seed=seed,
        burst_fraction=burst_fraction,
    )


def household_devices(count: int = 10) -> List[DeviceSpec]:
    """A mixed device set cycling through the corpus classes with short actions."""
    classes = ["door", "light", "lock", "shade", "fan", "light", "door", "lock", "fan", "vacuum"]
    devices = []
    for i in range(count):
        device_class = classes[i % len(classes)]
        devices.append(DeviceSpec(device_id=f"{device_class}_{i}", action_class=device_class))
    return devices


def write_workload(path, workload: WorkloadSpec):
    document = {
        "routines": [
            {"id": dag.id, "arrival": dag.arrival, "routine": serialize_routine(dag)}
            for dag in workload.routines
        ]
    }
    Path(path).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")

