"""Discrete-event simulation of a hub driving virtual devices.

One heap of (time, sequence) events; handlers are `_on_<kind>` methods.
Everything random comes from generators seeded by the run seed, so a run
is a pure function of its inputs.
"""

import heapq
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from durations.keys import Transition, TransitionKey
from durations.store import DistributionStore
from lib import console
from lib.errors import ConfigError, ValidationError
from lib.settings import get_settings
from lifecycle.models import ActionInstance, DeviceMode, EventKind, PollingPolicy, ProgressEvent
from lifecycle.tracker import ActionTracker
from pollplan.cache import PlanCache
from routine.models import RoutineDag
from routine.runstate import TERMINAL_EVENTS, RoutineRun
from sched.models import SlotKey
from sim.corpus import ground_truth, train_store
from sim.devices import Execution, VirtualDevice
from sim.metrics import compute_metrics
from sim.models import DeviceSpec, Interruption, MetricsReport, PolicyConfig, SimTrace, WorkloadSpec
from sim.schedulers import SchedulerPolicy, make_scheduler

_EPS = 1e-9


class SimResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    trace: SimTrace
    report: MetricsReport


class Simulation:
    def __init__(
        self,
        routines: Sequence[RoutineDag],
        devices: Sequence[DeviceSpec],
        config: Optional[PolicyConfig] = None,
        seed: int = 0,
        store: Optional[DistributionStore] = None,
        plans: Optional[PlanCache] = None,
        interruptions: Iterable[Interruption] = (),
    ):
        self.config = config or PolicyConfig()
        self.seed = seed
        self.settings = get_settings()
        self.devices: Dict[str, VirtualDevice] = {}
        for spec in devices:
            if spec.device_id in self.devices:
                raise ConfigError(f"Device {spec.device_id} is defined twice")
            self.devices[spec.device_id] = VirtualDevice(spec)
        self._dags: Dict[str, RoutineDag] = {}
        for dag in routines:
            if dag.id in self._dags:
                raise ConfigError(f"Routine {dag.id} appears twice in the workload")
            unknown = sorted(dag.devices() - set(self.devices))
            if unknown:
                raise ConfigError(f"Routine {dag.id} references undefined devices: {', '.join(unknown)}")
            self._dags[dag.id] = dag

        training, sampling = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(sampling)
        if store is None:
            store = train_store(devices, self.config.training_samples, seed=training)
        self.store = store
        self.plans = plans or PlanCache(
            store,
            tolerance_for=self._tolerance_for_key,
            slo=self.config.slo,
            min_poll_interval=self.settings.min_poll_interval,
            untrained_timeout=self.config.untrained_timeout,
            strategy="periodic" if self.config.polling == PollingPolicy.PERIODIC else "adaptive",
        )
        self.tracker = ActionTracker(
            {d: v.spec for d, v in self.devices.items()},
            self.plans,
            policy=self.config.polling,
            tolerance_for=self.tolerance,
            untrained_timeout=self.config.untrained_timeout,
            learn=self.config.learn,
        )

        self.trace = SimTrace()
        self.now = 0.0
        self.runs: Dict[str, RoutineRun] = {}
        self.finished: Dict[str, float] = {}
        self.instances: Dict[SlotKey, ActionInstance] = {}
        self.dispatched: Set[SlotKey] = set()
        self.ready_at: Dict[SlotKey, float] = {}
        self.interruptions: Dict[SlotKey, Interruption] = {}
        self._active: List[str] = []
        self._queue: List[Tuple[float, int, str, Dict[str, Any]]] = []
        self._seq = 0
        self._poll_at: Dict[SlotKey, float] = {}
        self._deadline_at: Dict[SlotKey, float] = {}
        self.scheduler: SchedulerPolicy = make_scheduler(self.config.scheduler, self)
        for interruption in interruptions:
            self.inject(interruption)

    # ---- Configuration helpers ----
    def tolerance(self, action_class: str) -> float:
        if action_class in self.config.qw_overrides:
            return self.config.qw_overrides[action_class]
        return self.settings.detection_tolerance(action_class)

    def _tolerance_for_key(self, key: TransitionKey) -> float:
        device = self.devices.get(key.device_id)
        return self.tolerance(device.spec.action_class if device else "")

    def polled(self, device_id: str) -> bool:
        return self.devices[device_id].mode == DeviceMode.PULL and self.config.polling != PollingPolicy.NONE

    def _key(self, device_id: str, action: str, transition: Transition) -> TransitionKey:
        return TransitionKey(device_id=device_id, action_kind=action, transition=transition)

    def _estimates(self, dag: RoutineDag) -> Dict[str, Tuple[float, float]]:
        """(length, start_offset) per action from the learned means, routine estimates otherwise."""
        estimates = {}
        for spec in dag.actions:
            ack = self._key(spec.device, spec.action, Transition.ACK_TO_START)
            run = self._key(spec.device, spec.action, Transition.START_TO_COMPLETE)
            offset = self.store.get(ack).mean if self.store.is_trained(ack) else spec.start_offset
            body = self.store.get(run).mean if self.store.is_trained(run) else spec.length - min(spec.start_offset, spec.length)
            if offset + body > _EPS:
                estimates[spec.id] = (offset + body, offset)
        return estimates

    def upper_bound(self, run: RoutineRun, action_id: str) -> float:
        spec = run.dag.action(action_id)
        total = 0.0
        for transition in Transition:
            key = self._key(spec.device, spec.action, transition)
            if self.store.is_trained(key):
                total += self.store.get(key).upper_bound()
            elif transition == Transition.START_TO_COMPLETE:
                total += self.config.untrained_timeout
        return total

    def _sample_duration(self, device: VirtualDevice, dag: RoutineDag, action_id: str) -> float:
        spec = dag.action(action_id)
        law = ground_truth(device.spec.action_class, spec.action, fallback_mean=self._dags[dag.id].action(action_id).length)
        if self.config.duration_sd_scale != 1.0:
            law = law.model_copy(update={"sd": law.sd * self.config.duration_sd_scale})
        duration = law.sample(self.rng)
        if self.config.duration_noise > 0:
            duration *= 1.0 + float(self.rng.uniform(-self.config.duration_noise, self.config.duration_noise))
        return duration

    # ---- Interruptions ----
    def inject(self, interruption: Interruption) -> "Simulation":
        dag = self._dags.get(interruption.routine_id)
        if dag is None or interruption.action_id not in dag.action_index:
            raise ValidationError(
                f"Interruption targets unknown action {interruption.routine_id}/{interruption.action_id}"
            )
        if interruption.at_fraction >= 1.0:
            console.warn(
                "sim",
                f"interruption of {interruption.routine_id}/{interruption.action_id} at {interruption.at_fraction:.0%} is beyond completion, ignored",
            )
            return self
        self.interruptions[(interruption.routine_id, interruption.action_id)] = interruption
        return self

    # ---- Event queue ----
    def schedule(self, t: float, kind: str, **payload):
        heapq.heappush(self._queue, (t, self._seq, kind, payload))
        self._seq += 1

    def run(self) -> SimResult:
        for dag in sorted(self._dags.values(), key=lambda r: (r.arrival, r.id)):
            self.schedule(dag.arrival, "arrival", routine=dag.id)
        while self._queue:
            t, _, kind, payload = heapq.heappop(self._queue)
            self.now = t
            getattr(self, f"_on_{kind}")(t, **payload)
        for rid in self._active:
            console.warn("sim", f"routine {rid} never finished")
            self.trace.add(self.now, "routine_unfinished", routine=rid)
        report = compute_metrics(
            self.trace,
            policy=self.config.name,
            seed=self.seed,
            polling=self.config.polling != PollingPolicy.NONE,
        )
        return SimResult(trace=self.trace, report=report)

    # ---- Views used by schedulers ----
    def active_runs(self) -> List[RoutineRun]:
        return [self.runs[rid] for rid in self._active]

    def pending_on(self, run: RoutineRun, device_id: str) -> bool:
        """Whether the run still has an undecided action on the device."""
        blocked = run.blocked()
        return any(
            spec.device == device_id and not run.terminal(spec.id) and spec.id not in blocked
            for spec in run.dag.actions
        )

    # ---- Dispatch ----
    def _dispatch(self, now: float):
        progressed = True
        while progressed:
            progressed = False
            for run in self.active_runs():
                for action_id in sorted(run.ready(), key=run.dag.position):
                    key = (run.dag.id, action_id)
                    self.ready_at.setdefault(key, now)
                    if self.tracker.is_busy(run.dag.action(action_id).device):
                        continue
                    if self.scheduler.admit(run, action_id, now):
                        self._request(run, action_id, now)
                        progressed = True

    def _request(self, run: RoutineRun, action_id: str, now: float):
        rid = run.dag.id
        key = (rid, action_id)
        spec = run.dag.action(action_id)
        run.dispatch(action_id)
        self.dispatched.add(key)
        self.scheduler.on_dispatch(run, action_id, now)
        instance = self.tracker.request_action(f"{rid}/{action_id}", spec.action, spec.device, now, routine_id=rid)
        self.instances[key] = instance
        device = self.devices[spec.device]
        interruption = self.interruptions.get(key)
        device.executions[key] = Execution(
            key=key,
            duration=self._sample_duration(device, run.dag, action_id),
            requested=now,
            stall_at=interruption.at_fraction if interruption else None,
            stall=interruption.duration if interruption else 0.0,
        )
        self.trace.add(now, "request", routine=rid, action=action_id, device=spec.device, ready=round(self.ready_at[key], 6))
        self.schedule(now + self.config.network_delay, "device_request", key=key)
        self.schedule(instance.ack_deadline, "deadline", key=key)

    # ---- Device side ----
    def _pushes(self, device: VirtualDevice) -> bool:
        return not self.polled(device.device_id)

    def _started(self, device: VirtualDevice, execution: Execution, t: float):
        rid, action_id = execution.key
        self.trace.add(t, "exec_start", routine=rid, action=action_id, device=device.device_id)
        if execution.finishes:
            self.schedule(execution.complete, "exec_complete", key=execution.key)
        if self._pushes(device):
            self.schedule(t + self.config.network_delay, "push", key=execution.key, state=execution.state(t))

    def _on_device_request(self, t: float, key: SlotKey):
        device = self.devices[self.instances[key].device_id]
        execution = device.executions.pop(key)
        outcome = device.request(execution, t)
        if outcome == "rejected":
            self.trace.add(t, "rejected", routine=key[0], action=key[1], device=device.device_id)
            return
        self.schedule(t + self.config.network_delay, "ack", key=key)
        if outcome == "accepted":
            self._started(device, execution, t)

    def _on_exec_complete(self, t: float, key: SlotKey):
        device = self.devices[self.instances[key].device_id]
        execution = device.executions[key]
        self.trace.add(t, "exec_complete", routine=key[0], action=key[1], device=device.device_id)
        if self._pushes(device):
            self.schedule(t + self.config.network_delay, "push", key=key, state=execution.state(t))
        upcoming = device.release(t)
        if upcoming is not None:
            self._started(device, upcoming, t)

    # ---- Hub side ----
    def _on_arrival(self, t: float, routine: str):
        dag = self._dags[routine]
        dag = dag.with_estimates(self._estimates(dag))
        run = RoutineRun(dag)
        self.runs[routine] = run
        self._active.append(routine)
        self.trace.add(t, "arrival", routine=routine)
        self.scheduler.on_arrival(run, t)
        self._dispatch(t)

    def _on_ack(self, t: float, key: SlotKey):
        instance = self.instances[key]
        device = self.devices[instance.device_id]
        observed = device.observe(key, t - self.config.network_delay) if self.polled(device.device_id) else None
        self._after_tracker(key, self.tracker.on_ack(instance, t, observed), t)

    def _on_poll(self, t: float, key: SlotKey):
        instance = self.instances[key]
        if instance.terminal or instance.next_poll_at is None or abs(instance.next_poll_at - t) > _EPS:
            return
        state = self.devices[instance.device_id].observe(key, t)
        self.trace.add(t, "poll", routine=key[0], action=key[1], phase=state["phase"])
        self.schedule(t + self.config.network_delay, "poll_result", key=key, state=state)

    def _on_poll_result(self, t: float, key: SlotKey, state: Dict[str, Any]):
        self._after_tracker(key, self.tracker.on_poll_result(self.instances[key], state, t), t)

    def _on_push(self, t: float, key: SlotKey, state: Dict[str, Any]):
        self._after_tracker(key, self.tracker.on_push_update(self.instances[key], state, t), t)

    def _on_deadline(self, t: float, key: SlotKey):
        self._after_tracker(key, self.tracker.check_deadlines(self.instances[key], t), t)

    def _on_overrun(self, t: float, key: SlotKey):
        self.scheduler.on_overrun(key, t)

    def _after_tracker(self, key: SlotKey, events: List[ProgressEvent], t: float):
        instance = self.instances[key]
        if not instance.terminal:
            if instance.next_poll_at is not None and self._poll_at.get(key) != instance.next_poll_at:
                self._poll_at[key] = instance.next_poll_at
                self.schedule(instance.next_poll_at, "poll", key=key)
            if instance.failure_deadline is not None and self._deadline_at.get(key) != instance.failure_deadline:
                self._deadline_at[key] = instance.failure_deadline
                self.schedule(instance.failure_deadline, "deadline", key=key)
        if events:
            self._progress(key, events, t)

    def _progress(self, key: SlotKey, events: List[ProgressEvent], t: float):
        rid, action_id = key
        run = self.runs[rid]
        instance = self.instances[key]
        for event in events:
            self.trace.add(t, event.kind.value, routine=rid, action=action_id, device=instance.device_id)
            run.record(action_id, event.kind)
            self.scheduler.on_progress(run, action_id, event.kind, t)
        if any(e.kind in TERMINAL_EVENTS for e in events):
            self.trace.add(
                t,
                "action_summary",
                routine=rid,
                action=action_id,
                polls=instance.polls_issued,
                extra_polls=instance.extra_polls_beyond_u,
                polled=self.polled(instance.device_id),
            )
            blocked = run.blocked()
            if blocked:
                self.scheduler.on_blocked(run, blocked)
            if run.finished and rid not in self.finished:
                self.finished[rid] = t
                self._active.remove(rid)
                self.trace.add(t, "routine_finished", routine=rid, arrival=run.dag.arrival)
                self.scheduler.on_finished(run, t)
        self._dispatch(t)


def inject_interruption(simulation: Simulation, interruption: Interruption) -> Simulation:
    return simulation.inject(interruption)


def run(
    workload: WorkloadSpec,
    devices: Sequence[DeviceSpec],
    policy_config: Optional[PolicyConfig] = None,
    seed: Optional[int] = None,
    store: Optional[DistributionStore] = None,
    plans: Optional[PlanCache] = None,
    interruptions: Iterable[Interruption] = (),
) -> SimResult:
    """Simulate `workload` once; the seed defaults to the workload's own."""
    simulation = Simulation(
        workload.routines,
        devices,
        policy_config,
        seed=workload.seed if seed is None else seed,
        store=store,
        plans=plans,
        interruptions=interruptions,
    )
    return simulation.run()
