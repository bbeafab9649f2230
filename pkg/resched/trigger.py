import time
from typing import Dict, Iterable, Mapping, Optional

from lib import console
from lib.errors import ScheduleConsistencyError, ValidationError
from pollplan.post_bound import progress_estimate
from resched.models import Deviation, DeviationKind, RescheduleAudit, RescheduleRecord
from resched.preprocess import apply_to_slot, freeze_order, impacted_set, postsets_from_timelines
from resched.rv import reschedule_rv
from resched.stf import reschedule_stf
from routine.models import RoutineDag
from sched.models import SerializationOrder, Slot, SlotKey, Timelines
from sched.verify import verify_safety

POLICIES = ("stf", "rv")


class DeviationMonitor:
    """Decides when a running action has drifted far enough from its slot to reschedule.

    Early finishes are handled reactively (beyond `reactive_threshold`);
    lateness is raised proactively once `proactive_fraction` of the action's
    bound has elapsed, and raised again only when a newer estimate grows by
    more than the threshold.
    """

    def __init__(self, reactive_threshold: float = 1.0, proactive_fraction: float = 0.95):
        if not 0 < proactive_fraction <= 1:
            raise ValidationError("proactive_fraction must be in (0, 1]")
        self.reactive_threshold = reactive_threshold
        self.proactive_fraction = proactive_fraction
        self._reported: Dict[SlotKey, float] = {}

    def check_at(self, slot: Slot, upper_bound: float) -> float:
        """Absolute time of the proactive lateness check for a started slot."""
        return slot.start + self.proactive_fraction * upper_bound

    def on_complete(self, slot: Slot, completed_at: float) -> Optional[Deviation]:
        dt = completed_at - slot.end
        self._reported.pop(slot.key, None)
        if dt < -self.reactive_threshold:
            kind = DeviationKind.EARLY
        elif dt > self.reactive_threshold:
            kind = DeviationKind.LATE
        else:
            return None
        return Deviation(routine_id=slot.routine_id, action_id=slot.action_id, kind=kind, dt=dt, detected_at=completed_at)

    def on_overrun(
        self,
        slot: Slot,
        now: float,
        upper_bound: float,
        Q_w: float,
        progress: Optional[float] = None,
    ) -> Optional[Deviation]:
        """Late deviation from progress extrapolation, or pessimistically U + Q_w past the start."""
        elapsed = now - slot.start
        if progress is not None and 0.0 < progress < 1.0:
            expected_end = now + progress_estimate(progress, elapsed)
        else:
            expected_end = slot.start + upper_bound + Q_w
        dt = expected_end - slot.end
        previous = self._reported.get(slot.key)
        if dt <= self.reactive_threshold:
            return None
        if previous is not None and expected_end <= previous + self.reactive_threshold:
            return None
        self._reported[slot.key] = expected_end
        return Deviation(routine_id=slot.routine_id, action_id=slot.action_id, kind=DeviationKind.LATE, dt=dt, detected_at=now)


class Rescheduler:
    """Applies deviations to the timelines with STF or RV and keeps an audit trail."""

    def __init__(self, policy: str = "stf", verify: bool = True):
        if policy not in POLICIES:
            raise ValueError(f"Unsupported rescheduling policy: {policy}. Supported: {', '.join(POLICIES)}")
        self.policy = policy
        self.verify = verify
        self.audit = RescheduleAudit()

    def freeze(
        self,
        timelines: Timelines,
        order: SerializationOrder,
        arrivals: Mapping[str, float],
    ) -> SerializationOrder:
        """Freeze the active routines' order from the committed timelines and adopt it."""
        frozen = freeze_order(postsets_from_timelines(timelines, active=order.order), arrivals)
        order.order = frozen.order
        order.postsets = frozen.postsets
        return order

    def handle(
        self,
        deviation: Deviation,
        timelines: Timelines,
        order: SerializationOrder,
        routines: Mapping[str, RoutineDag],
        arrivals: Mapping[str, float],
        started: Iterable[SlotKey] = (),
        now: float = 0.0,
        trigger: str = "completion",
    ) -> int:
        """Reschedule around `deviation`; returns the impacted-set size."""
        begin = time.perf_counter()
        started = set(started)
        self.freeze(timelines, order, arrivals)
        impacted = impacted_set(deviation, timelines, routines, order, started)
        if self.policy == "stf":
            apply_to_slot(deviation, timelines)
            reschedule_stf(impacted, timelines, order, routines, now)
        else:
            reschedule_rv(deviation, timelines, routines, started, now)
        elapsed = time.perf_counter() - begin
        if self.verify and not verify_safety(timelines):
            raise ScheduleConsistencyError(f"{self.policy} produced overlapping slots after {deviation.key}")
        self.audit.add(
            RescheduleRecord(
                t=round(now, 6),
                trigger=trigger,
                kind=deviation.kind.value,
                impacted=len(impacted),
                policy=self.policy,
                elapsed_compute=elapsed,
            )
        )
        console.info(
            "resched",
            f"{self.policy} {deviation.kind.value} dt={deviation.dt:+.2f}s on {deviation.routine_id}/{deviation.action_id}: {len(impacted)} impacted",
        )
        return len(impacted)
