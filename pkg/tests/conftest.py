import random
from typing import List

import numpy as np
import pytest

from durations.distribution import EmpiricalDistribution
from durations.keys import Transition, TransitionKey
from durations.store import DistributionStore
from lifecycle.models import DeviceMode, DeviceProfile
from routine.models import RoutineDag
from routine.parser import parse_routine


def uniform(upper: float = 10.0, bins: int = 10) -> EmpiricalDistribution:
    """Exact Uniform(0, upper] as an equal-mass histogram."""
    return EmpiricalDistribution.from_histogram(np.linspace(0.0, upper, bins + 1), np.ones(bins))


def key(device: str = "door_0", action: str = "close", transition: Transition = Transition.START_TO_COMPLETE) -> TransitionKey:
    return TransitionKey(device_id=device, action_kind=action, transition=transition)


@pytest.fixture
def uniform_dist() -> EmpiricalDistribution:
    return uniform()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def door() -> DeviceProfile:
    return DeviceProfile(device_id="door_0", action_class="door", mode=DeviceMode.PULL, min_poll_interval=0.5)


@pytest.fixture
def light() -> DeviceProfile:
    return DeviceProfile(device_id="light_0", action_class="light", mode=DeviceMode.PUSH)


@pytest.fixture
def door_store() -> DistributionStore:
    """door_0/close trained on Uniform(0, 10] for both transitions."""
    store = DistributionStore()
    store.put(key(transition=Transition.START_TO_COMPLETE), uniform())
    store.put(key(transition=Transition.ACK_TO_START), uniform())
    return store


def routine(rid: str, actions, arrival: float = 0.0) -> RoutineDag:
    """actions: (id, device, length[, after]) tuples; `after` lists (parent, event) pairs."""
    entries = []
    for spec in actions:
        aid, device, length = spec[:3]
        after = spec[3] if len(spec) > 3 else []
        entries.append(
            {
                "id": aid,
                "device": device,
                "action": "set",
                "length": length,
                "after": [{"action_id": p, "on": on} for p, on in after],
            }
        )
    return parse_routine({"id": rid, "arrival": arrival, "actions": entries})


def random_workload(rng: random.Random, max_routines: int = 4, max_devices: int = 3, max_actions: int = 4) -> List[RoutineDag]:
    devices = [f"d{i}" for i in range(rng.randint(1, max_devices))]
    routines = []
    for r in range(rng.randint(1, max_routines)):
        actions = []
        for i in range(rng.randint(1, max_actions)):
            parents = [(f"a{j}", rng.choice(["start", "complete", "ack"])) for j in range(i) if rng.random() < 0.5]
            actions.append((f"a{i}", rng.choice(devices), round(rng.uniform(0.5, 10.0), 2), parents))
        routines.append(routine(f"R{r}", actions, arrival=round(rng.uniform(0.0, 20.0), 2)))
    return sorted(routines, key=lambda d: (d.arrival, d.id))
