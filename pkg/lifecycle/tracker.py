"""RASC state machine: ack wait, start detection, complete detection, failure detection."""

from typing import Any, Callable, Dict, List, Optional

from durations.keys import Transition, TransitionKey
from durations.store import DistributionStore
from lib import console
from lib.errors import DeviceBusyError, MilestoneNotReachedError, ValidationError
from lifecycle.models import (
    ActionInstance,
    ActionState,
    DeviceMode,
    DeviceProfile,
    EventKind,
    PollingPolicy,
    ProgressEvent,
)
from pollplan.cache import PlanCache
from pollplan.models import FailureDeclared
from pollplan.post_bound import PostBoundBackoff, progress_estimate

_EPS = 1e-9


class ActionTracker:
    """Drives one state machine per in-flight action.

    Instances are independent; the tracker only owns the busy-device map and
    the plan cache it polls from.
    """

    def __init__(
        self,
        devices: Dict[str, DeviceProfile],
        plans: PlanCache,
        policy: PollingPolicy = PollingPolicy.ADAPTIVE,
        tolerance_for: Optional[Callable[[str], float]] = None,
        untrained_timeout: float = 600.0,
        learn: bool = False,
    ):
        self.devices = devices
        self.plans = plans
        self.store: DistributionStore = plans.store
        self.policy = policy
        self.tolerance_for = tolerance_for or (lambda action_class: 5.0)
        self.untrained_timeout = untrained_timeout
        self.learn = learn
        self._busy: Dict[str, str] = {}

    # ---- Helpers ----
    def _profile(self, device_id: str) -> DeviceProfile:
        if device_id not in self.devices:
            raise ValidationError(f"Unknown device: {device_id}")
        return self.devices[device_id]

    def is_busy(self, device_id: str) -> bool:
        return device_id in self._busy

    def _uses_polling(self, instance: ActionInstance) -> bool:
        profile = self.devices[instance.device_id]
        return profile.mode == DeviceMode.PULL and self.policy != PollingPolicy.NONE

    def _bound(self, key: TransitionKey) -> float:
        if self.store.is_trained(key):
            return self.store.get(key).upper_bound()
        return self.untrained_timeout

    def _event(self, instance: ActionInstance, kind: EventKind, now: float) -> ProgressEvent:
        instance.timestamps[kind.value] = now
        return ProgressEvent(action_id=instance.id, kind=kind, at=now)

    def _release(self, instance: ActionInstance):
        if self._busy.get(instance.device_id) == instance.id:
            del self._busy[instance.device_id]
        instance.next_poll_at = None

    # ---- Operations ----
    def request_action(
        self,
        action_id: str,
        action_kind: str,
        device_id: str,
        now: float,
        routine_id: Optional[str] = None,
    ) -> ActionInstance:
        profile = self._profile(device_id)
        if device_id in self._busy:
            raise DeviceBusyError(f"Device {device_id} is busy with {self._busy[device_id]}")
        Q_w = self.tolerance_for(profile.action_class)
        instance = ActionInstance(
            id=action_id,
            device_id=device_id,
            action_kind=action_kind,
            routine_id=routine_id,
            keys={
                t: TransitionKey(device_id=device_id, action_kind=action_kind, transition=t)
                for t in Transition
            },
            Q_w=Q_w,
        )
        instance.timestamps["requested"] = now
        instance.state = ActionState.ACK_WAIT
        instance.ack_deadline = now + Q_w
        self._busy[device_id] = action_id
        console.info("rasc", f"{action_id} requested on {device_id} (Q_w={Q_w}s)")
        return instance

    def on_ack(
        self, instance: ActionInstance, now: float, observed_state: Optional[Dict[str, Any]] = None
    ) -> List[ProgressEvent]:
        if instance.state != ActionState.ACK_WAIT:
            return []
        events = [self._event(instance, EventKind.ACK, now)]
        instance.ack_deadline = None
        self._enter_phase(instance, ActionState.START_DETECTION, now)
        if observed_state is not None:
            events += self._match(instance, observed_state, now)
        if not instance.terminal and instance.next_poll_at is None and self._uses_polling(instance):
            self._schedule_next(instance, now, observed_state or {})
        return events

    def on_poll_result(
        self, instance: ActionInstance, observed_state: Dict[str, Any], now: float
    ) -> List[ProgressEvent]:
        if instance.terminal or instance.state == ActionState.ACK_WAIT:
            return []
        instance.polls_issued += 1
        instance._last_poll_at = now
        horizon = instance.horizon
        if horizon is not None and now > horizon + _EPS:
            instance.extra_polls_beyond_u += 1
        events = self._match(instance, observed_state, now)
        if not instance.terminal and not (events and instance.state == ActionState.COMPLETE_DETECTION
                                          and events[-1].kind == EventKind.START):
            events += self._schedule_next(instance, now, observed_state)
        return events

    def on_push_update(
        self, instance: ActionInstance, state_change: Dict[str, Any], now: float
    ) -> List[ProgressEvent]:
        if instance.terminal:
            return []
        if instance.state == ActionState.ACK_WAIT:
            # the device reported before the RPC reply; treat as implicit ack
            events = self.on_ack(instance, now)
            return events + self._match(instance, state_change, now)
        return self._match(instance, state_change, now)

    def check_deadlines(self, instance: ActionInstance, now: float) -> List[ProgressEvent]:
        """Ack timeout, plus the U + Q_w bound for instances nobody polls."""
        if instance.terminal:
            return []
        if instance.state == ActionState.ACK_WAIT:
            if instance.ack_deadline is not None and now >= instance.ack_deadline - _EPS:
                console.warn("rasc", f"{instance.id}: no ack within {instance.Q_w}s, device unresponsive")
                return self._fail(instance, now)
            return []
        if not self._uses_polling(instance) and instance.failure_deadline is not None:
            if now >= instance.failure_deadline - _EPS:
                return self._fail(instance, now)
        return []

    def detection_time(
        self,
        instance: ActionInstance,
        ground_truth_change: float,
        milestone: EventKind = EventKind.COMPLETE,
    ) -> float:
        if milestone.value not in instance.timestamps:
            raise MilestoneNotReachedError(f"{instance.id} never reached {milestone.value}")
        return max(0.0, instance.timestamps[milestone.value] - ground_truth_change)

    # ---- Internals ----
    def _enter_phase(self, instance: ActionInstance, state: ActionState, now: float):
        instance.state = state
        instance.phase_anchor = now
        instance._backoff = None
        transition = Transition.ACK_TO_START if state == ActionState.START_DETECTION else Transition.START_TO_COMPLETE
        key = instance.keys[transition]
        if self._uses_polling(instance):
            instance.plan = self.plans.plan_for(key)
            instance.failure_deadline = None
            instance.next_poll_at = None
        else:
            instance.plan = None
            instance.next_poll_at = None
            instance.failure_deadline = now + self._bound(key) + instance.Q_w

    def _match(self, instance: ActionInstance, state: Dict[str, Any], now: float) -> List[ProgressEvent]:
        profile = self.devices[instance.device_id]
        events: List[ProgressEvent] = []
        if instance.state == ActionState.START_DETECTION:
            if profile.milestones.completed(state):
                # short-circuit: both milestones observed by the same poll
                events.append(self._event(instance, EventKind.START, now))
                events.append(self._event(instance, EventKind.COMPLETE, now))
                self._complete(instance, now)
            elif profile.milestones.started(state):
                events.append(self._event(instance, EventKind.START, now))
                self._enter_phase(instance, ActionState.COMPLETE_DETECTION, now)
                if self._uses_polling(instance):
                    self._schedule_next(instance, now, state)
        elif instance.state == ActionState.COMPLETE_DETECTION:
            if profile.milestones.completed(state):
                events.append(self._event(instance, EventKind.COMPLETE, now))
                self._complete(instance, now)
        return events

    def _complete(self, instance: ActionInstance, now: float):
        instance.state = ActionState.COMPLETED
        self._release(instance)
        if not self.learn:
            return
        stamps = instance.timestamps
        for transition, (begin, end) in {
            Transition.ACK_TO_START: ("ack", "start"),
            Transition.START_TO_COMPLETE: ("start", "complete"),
        }.items():
            duration = stamps[end] - stamps[begin]
            if duration > 0:
                key = instance.keys[transition]
                self.store.observe(key, duration)
                self.plans.refresh(key)

    def _fail(self, instance: ActionInstance, now: float) -> List[ProgressEvent]:
        event = self._event(instance, EventKind.FAILURE, now)
        instance.state = ActionState.FAILED
        self._release(instance)
        console.info("rasc", f"{instance.id} declared failed at t={now:.2f}")
        return [event]

    def _progress(self, instance: ActionInstance, state: Dict[str, Any]) -> Optional[float]:
        field = self.devices[instance.device_id].progress_field
        if not field or field not in state:
            return None
        try:
            value = float(state[field])
        except (TypeError, ValueError):
            return None
        return value

    def _schedule_next(self, instance: ActionInstance, now: float, state: Dict[str, Any]) -> List[ProgressEvent]:
        """Set next_poll_at from the plan, or from the post-U planner once U passed."""
        profile = self.devices[instance.device_id]
        plan = instance.plan
        anchor = instance.phase_anchor
        earliest = now + profile.min_poll_interval if instance._last_poll_at == now else now
        for offset in plan.polls:
            at = anchor + offset
            if at > now + _EPS:
                instance.next_poll_at = max(at, earliest)
                return []

        # past the planned horizon
        horizon = anchor + plan.U
        if instance._backoff is None:
            base = instance.Q_w if plan.strategy == "periodic" else profile.min_poll_interval
            instance._backoff = PostBoundBackoff(instance.Q_w, base_gap=base)
        backoff: PostBoundBackoff = instance._backoff
        backoff.since_u = max(0.0, now - horizon)

        progress = self._progress(instance, state)
        fresh = (
            progress is not None
            and 0.0 < progress < 1.0
            and (instance.last_progress is None or progress > instance.last_progress + _EPS)
        )
        if progress is not None:
            instance.last_progress = progress
        elapsed = now - instance.timestamps["requested"]
        if fresh:
            backoff.extend(progress_estimate(progress, elapsed))
        offset = backoff.next(progress if fresh else None, elapsed)
        if isinstance(offset, FailureDeclared):
            return self._fail(instance, now)
        instance.next_poll_at = now + max(offset, profile.min_poll_interval)
        return []
