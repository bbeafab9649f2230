"""Ground-truth action durations the simulator samples from.

The hub never sees these laws directly; it only learns from traces drawn
from them.
"""

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from durations.keys import Transition, TransitionKey
from durations.store import TRACE_COLUMNS, DistributionStore
from lib.settings import get_settings
from lifecycle.models import DeviceProfile


class ActionClass(BaseModel):
    """Gaussian start-to-complete law for one (device class, action) pair."""

    model_config = ConfigDict(frozen=True)

    device_class: str
    action: str
    mean: float = Field(gt=0)
    sd: float = Field(ge=0)

    @property
    def name(self) -> str:
        return f"{self.device_class}_{self.action}"

    def sample(self, rng: np.random.Generator, n: Optional[int] = None):
        # truncated at a tenth of the mean so durations stay positive
        floor = 0.1 * self.mean
        if n is None:
            return max(floor, float(rng.normal(self.mean, self.sd)))
        return np.maximum(floor, rng.normal(self.mean, self.sd, size=n))

    def recentered(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n samples shifted so their mean is exactly `mean`."""
        values = self.sample(rng, n)
        values = values - values.mean() + self.mean
        return np.maximum(values, 0.1 * self.mean)


POLLING_CLASSES: List[ActionClass] = [
    ActionClass(device_class="door", action="close", mean=3.19, sd=0.15),
    ActionClass(device_class="door", action="open", mean=3.06, sd=0.15),
    ActionClass(device_class="shade", action="up", mean=29.64, sd=1.2),
    ActionClass(device_class="shade", action="down", mean=27.45, sd=1.2),
    ActionClass(device_class="thermostat", action="set", mean=432.17, sd=40.0),
]

# Extra household devices for scheduling workloads
WORKLOAD_CLASSES: List[ActionClass] = [
    ActionClass(device_class="light", action="on", mean=1.5, sd=0.2),
    ActionClass(device_class="light", action="off", mean=1.4, sd=0.2),
    ActionClass(device_class="lock", action="lock", mean=4.5, sd=0.4),
    ActionClass(device_class="lock", action="unlock", mean=4.2, sd=0.4),
    ActionClass(device_class="fan", action="on", mean=6.0, sd=0.8),
    ActionClass(device_class="fan", action="off", mean=5.0, sd=0.6),
    ActionClass(device_class="vacuum", action="clean", mean=120.0, sd=15.0),
]

CORPUS: Dict[Tuple[str, str], ActionClass] = {
    (c.device_class, c.action): c for c in POLLING_CLASSES + WORKLOAD_CLASSES
}


def actions_for(device_class: str) -> List[ActionClass]:
    return [c for c in CORPUS.values() if c.device_class == device_class]


def ground_truth(device_class: str, action: str, fallback_mean: float = 1.0) -> ActionClass:
    """Corpus law for the pair, or N(mean, 10%) around the routine's own estimate."""
    law = CORPUS.get((device_class, action))
    if law is not None:
        return law
    return ActionClass(device_class=device_class, action=action, mean=fallback_mean, sd=0.1 * fallback_mean)


def trace_rows(
    devices: Iterable[DeviceProfile], samples_per_key: int, seed: int = 0
) -> List[Tuple[TransitionKey, float]]:
    rng = np.random.default_rng(seed)
    rows: List[Tuple[TransitionKey, float]] = []
    for profile in sorted(devices, key=lambda d: d.device_id):
        for law in actions_for(profile.action_class):
            key = TransitionKey(
                device_id=profile.device_id, action_kind=law.action, transition=Transition.START_TO_COMPLETE
            )
            rows.extend((key, float(v)) for v in law.recentered(rng, samples_per_key))
    return rows


def synthesize_traces(path, devices: Iterable[DeviceProfile], samples_per_key: int = 200, seed: int = 0) -> int:
    """Write a training CSV for every corpus action of every device; returns the row count."""
    rows = trace_rows(devices, samples_per_key, seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for key, duration in rows:
            writer.writerow([key.device_id, key.action_kind, key.transition.value, f"{duration:.4f}"])
    return len(rows)


def train_store(
    devices: Iterable[DeviceProfile],
    samples_per_key: int,
    seed: int = 0,
    store: Optional[DistributionStore] = None,
) -> DistributionStore:
    """Training phase: fit every device's corpus actions from fresh ground-truth samples."""
    if store is None:
        settings = get_settings()
        store = DistributionStore(window=settings.drift_window, decay=settings.drift_decay)
    if samples_per_key <= 0:
        return store
    grouped: Dict[TransitionKey, List[float]] = {}
    for key, duration in trace_rows(devices, samples_per_key, seed):
        grouped.setdefault(key, []).append(duration)
    for key, durations in grouped.items():
        store.observe_many(key, durations)
    return store
