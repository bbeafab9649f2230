"""Named experiments: each returns a table of rows plus a few headline numbers."""

import csv
import io
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from durations.distribution import EmpiricalDistribution, stability_trace, wasserstein
from durations.keys import Transition, TransitionKey
from durations.store import DistributionStore
from lib import console
from lib.errors import InfeasibleBudgetError
from lib.settings import get_settings
from lifecycle.models import PollingPolicy
from pollplan.adaptive import find_polls, solve_recurrence
from pollplan.baselines import vopt_plan
from pollplan.models import PollPlanRequest
from routine.models import ActionSpec, RoutineDag
from sim.corpus import POLLING_CLASSES, ActionClass, train_store
from sim.engine import run
from sim.metrics import false_positives
from sim.models import DeviceSpec, Interruption, MetricsReport, PolicyConfig, SchedulerKind, WorkloadSpec
from sim.schedulers import baseline_schedulers
from sim.workload import generate_workload, household_devices


class ExperimentResult(BaseModel):
    name: str
    columns: List[str]
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({c: _cell(row.get(c)) for c in self.columns})
        return buffer.getvalue()


def _cell(value: Any) -> Any:
    if isinstance(value, float):
        return f"{value:.6f}"
    return "n/a" if value is None else value


def _device(law: ActionClass) -> DeviceSpec:
    return DeviceSpec(device_id=f"{law.device_class}_1", action_class=law.device_class)


def _key(law: ActionClass) -> TransitionKey:
    return TransitionKey(device_id=_device(law).device_id, action_kind=law.action, transition=Transition.START_TO_COMPLETE)


def _single_action_workload(law: ActionClass, count: int, spacing: float, seed: int) -> WorkloadSpec:
    """`count` one-action routines far enough apart never to contend."""
    device = _device(law)
    routines = [
        RoutineDag(
            id=f"r{i:04d}",
            actions=[ActionSpec(id="a1", device=device.device_id, action=law.action, length=law.mean)],
            arrival=round(i * spacing, 6),
        )
        for i in range(count)
    ]
    return WorkloadSpec(routines=routines, arrival_process="random", horizon=max(spacing * count, 1.0), seed=seed)


def _tolerance(law: ActionClass) -> float:
    return get_settings().detection_tolerance(law.device_class)


def polling_efficiency(runs: int = 200, training: int = 200, slo: float = 0.9, seed: int = 0) -> ExperimentResult:
    """Adaptive versus periodic polling on each corpus action class."""
    rows = []
    for law in POLLING_CLASSES:
        device = _device(law)
        Q_w = _tolerance(law)
        store = train_store([device], training, seed=seed)
        U = store.get(_key(law)).upper_bound()
        workload = _single_action_workload(law, runs, spacing=U + 4 * Q_w + 5.0, seed=seed)
        reports: Dict[PollingPolicy, MetricsReport] = {}
        for policy in (PollingPolicy.ADAPTIVE, PollingPolicy.PERIODIC):
            config = PolicyConfig(polling=policy, scheduler=SchedulerKind.FCFS, slo=slo)
            reports[policy] = run(workload, [device], config, seed=seed, store=store).report
        adaptive, periodic = reports[PollingPolicy.ADAPTIVE], reports[PollingPolicy.PERIODIC]
        reduction = 1.0 - adaptive.polls.mean / periodic.polls.mean if periodic.polls.mean > 0 else 0.0
        rows.append(
            {
                "action_class": law.name,
                "Q_w": Q_w,
                "adaptive_polls": adaptive.polls.mean,
                "periodic_polls": periodic.polls.mean,
                "reduction": reduction,
                "adaptive_detection": adaptive.detection_time.mean,
                "periodic_detection": periodic.detection_time.mean,
            }
        )
        console.info("experiment", f"{law.name}: {reduction:.0%} fewer polls than periodic")
    return ExperimentResult(
        name="polling",
        columns=["action_class", "Q_w", "adaptive_polls", "periodic_polls", "reduction", "adaptive_detection", "periodic_detection"],
        rows=rows,
        summary={
            "classes_with_40pct_fewer_polls": sum(1 for r in rows if r["reduction"] >= 0.4),
            "classes_detected_within_Q_w": sum(1 for r in rows if r["adaptive_detection"] <= r["Q_w"]),
        },
    )


def slo_attainment(events: int = 10000, training: int = 200, slo: float = 0.9, seed: int = 0) -> ExperimentResult:
    """Fraction of completions, drawn from the trained law, seen within Q_w by the planned polls."""
    rng = np.random.default_rng(seed)
    rows = []
    for law in POLLING_CLASSES:
        Q_w = _tolerance(law)
        dist = EmpiricalDistribution.fit(law.recentered(rng, training))
        plan = find_polls(PollPlanRequest(dist=dist, Q_w=Q_w, slo=slo, min_poll_interval=min(1.0, Q_w)))
        changes = np.array([dist.ppf(u) for u in rng.uniform(0.0, 1.0, size=events)])
        polls = np.asarray(plan.polls)
        index = np.searchsorted(polls, changes, side="left")
        seen = index < polls.size
        gaps = polls[np.minimum(index, polls.size - 1)] - changes
        within = float(np.mean(seen & (gaps <= Q_w + 1e-9)))
        rows.append({"action_class": law.name, "Q_w": Q_w, "k": plan.k, "coverage": plan.coverage, "attained": within})
    return ExperimentResult(
        name="slo",
        columns=["action_class", "Q_w", "k", "coverage", "attained"],
        rows=rows,
        summary={"min_attained": min(r["attained"] for r in rows)},
    )


def vopt_comparison(bin_count: int = 256, training: int = 500, slo: float = 0.9, seed: int = 0) -> ExperimentResult:
    """Expected detection and compute time of the recurrence placement against the V-opt DP."""
    rng = np.random.default_rng(seed)
    rows = []
    for law in POLLING_CLASSES:
        Q_w = _tolerance(law)
        dist = EmpiricalDistribution.fit(law.recentered(rng, training), bin_count=bin_count)
        U = dist.upper_bound()
        plan = find_polls(PollPlanRequest(dist=dist, Q_w=Q_w, slo=slo, min_poll_interval=min(1.0, Q_w)))
        begin = time.perf_counter()
        try:
            solve_recurrence(dist, plan.k, U)
        except InfeasibleBudgetError:
            pass
        recurrence_seconds = time.perf_counter() - begin
        vopt = vopt_plan(dist, plan.k, U)
        ratio = plan.expected_detection / vopt.expected_detection if vopt.expected_detection > 0 else None
        rows.append(
            {
                "action_class": law.name,
                "k": plan.k,
                "adaptive_detection": plan.expected_detection,
                "vopt_detection": vopt.expected_detection,
                "ratio": ratio,
                "recurrence_seconds": recurrence_seconds,
                "vopt_seconds": vopt.compute_seconds,
                "speedup": vopt.compute_seconds / recurrence_seconds if recurrence_seconds > 0 else None,
            }
        )
        console.info("experiment", f"{law.name}: V-opt took {vopt.compute_seconds:.4f}s vs {recurrence_seconds:.4f}s")
    return ExperimentResult(
        name="vopt",
        columns=["action_class", "k", "adaptive_detection", "vopt_detection", "ratio", "recurrence_seconds", "vopt_seconds", "speedup"],
        rows=rows,
    )


def convergence(
    seeds: int = 100,
    samples: int = 100,
    mean: float = 30.0,
    sd: float = 3.0,
    window: int = 200,
    decay: Optional[float] = None,
    seed: int = 0,
) -> ExperimentResult:
    """Samples to a stable learned law, and reconvergence after a Uniform(0,10] to Uniform(10,20] shift.

    The shifted stream is fed one sample at a time; the distance to the new
    law is recorded every 25 samples.
    """
    decay = get_settings().drift_decay if decay is None else decay
    rows = []
    for s in range(seeds):
        rng = np.random.default_rng([seed, s])
        stream = np.maximum(rng.normal(mean, sd, size=samples), 1e-3)
        _, first_stable = stability_trace(stream)
        rows.append({"seed": s, "samples_to_stability": first_stable})
    stable_within_25 = sum(1 for r in rows if r["samples_to_stability"] is not None and r["samples_to_stability"] <= 25)

    rng = np.random.default_rng([seed, seeds])
    key = TransitionKey(device_id="drift", action_kind="act", transition=Transition.START_TO_COMPLETE)
    store = DistributionStore(window=window, decay=decay)
    store.observe_many(key, rng.uniform(1e-6, 10.0, size=window))
    truth = EmpiricalDistribution.fit(rng.uniform(10.0, 20.0, size=5000))
    before = wasserstein(store.get(key), truth)
    trajectory = []
    for n, duration in enumerate(rng.uniform(10.0, 20.0, size=window), start=1):
        store.observe(key, float(duration))
        if n % 25 == 0:
            trajectory.append(wasserstein(store.get(key), truth))
    after = wasserstein(store.get(key), truth)
    return ExperimentResult(
        name="convergence",
        columns=["seed", "samples_to_stability"],
        rows=rows,
        summary={
            "stable_within_25": stable_within_25 / max(seeds, 1),
            "wasserstein_before_adaptation": before,
            "wasserstein_after_adaptation": after,
            "wasserstein_trajectory": trajectory,
        },
    )


def interruption_false_positives(
    runs: int = 500,
    at_fraction: float = 0.5,
    duration_factor: float = 0.5,
    action_class: str = "door_close",
    training: int = 200,
    seed: int = 0,
) -> ExperimentResult:
    """Stall each action once at `at_fraction` for duration_factor * Q_w and count false failures."""
    law = next(c for c in POLLING_CLASSES if c.name == action_class)
    device = _device(law)
    Q_w = _tolerance(law)
    stall = duration_factor * Q_w
    store = train_store([device], training, seed=seed)
    U = store.get(_key(law)).upper_bound()
    workload = _single_action_workload(law, runs, spacing=U + stall + 4 * Q_w + 10.0, seed=seed)
    interruptions = [
        Interruption(routine_id=dag.id, action_id="a1", at_fraction=at_fraction, duration=stall)
        for dag in workload.routines
    ]
    config = PolicyConfig(polling=PollingPolicy.ADAPTIVE, scheduler=SchedulerKind.FCFS)
    result = run(workload, [device], config, seed=seed, store=store, interruptions=interruptions)
    false_count = false_positives(result.trace)
    failures = len(result.trace.of_type("failure"))
    row = {
        "action_class": law.name,
        "at_fraction": at_fraction,
        "stall": stall,
        "runs": runs,
        "failures": failures,
        "false_positives": false_count,
        "extra_polls": result.report.extra_polls_beyond_u.mean,
    }
    return ExperimentResult(
        name="interruptions",
        columns=list(row),
        rows=[row],
        summary={"false_positives": false_count},
    )


def scheduling_comparison(
    seeds: Sequence[int] = tuple(range(10)),
    n_routines: int = 100,
    n_devices: int = 10,
    horizon: float = 1800.0,
    arrival_process: str = "random_bursty",
    schedulers: Optional[Sequence[SchedulerKind]] = None,
) -> ExperimentResult:
    """Latency, wait and parallelism of DAG-TL against the baselines on generated workloads."""
    schedulers = list(schedulers or [SchedulerKind.DAGTL_STF, SchedulerKind.DAGTL_RV] + baseline_schedulers())
    devices = household_devices(n_devices)
    rows = []
    for kind in schedulers:
        reports = []
        for seed in seeds:
            workload = generate_workload(devices, n_routines, arrival_process, horizon, seed=seed)
            config = PolicyConfig(scheduler=kind)
            reports.append(run(workload, devices, config, seed=seed).report)
        rows.append(
            {
                "scheduler": kind.value,
                "latency": float(np.mean([r.latency.mean for r in reports])),
                "wait_time": float(np.mean([r.wait_time.mean for r in reports])),
                "parallelism": float(np.mean([r.parallelism.mean for r in reports])),
                "idle_time": float(np.mean([r.idle_time.mean for r in reports])),
                "schedule_length": float(np.mean([r.schedule_length.mean for r in reports])),
            }
        )
    return ExperimentResult(
        name="scheduling",
        columns=["scheduler", "latency", "wait_time", "parallelism", "idle_time", "schedule_length"],
        rows=rows,
    )


EXPERIMENTS: Dict[str, Callable[..., ExperimentResult]] = {
    "polling": polling_efficiency,
    "slo": slo_attainment,
    "vopt": vopt_comparison,
    "convergence": convergence,
    "interruptions": interruption_false_positives,
    "scheduling": scheduling_comparison,
}
