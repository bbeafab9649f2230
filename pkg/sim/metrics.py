import csv
import io
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from sim.models import METRIC_NAMES, MetricSummary, MetricsReport, SimTrace

CSV_HEADER = ["policy", "seed", "metric", "mean", "q50", "q95"]


def summarize(values: Sequence[float]) -> MetricSummary:
    if len(values) == 0:
        return MetricSummary()
    data = np.asarray(values, dtype=float)
    return MetricSummary(
        mean=float(data.mean()),
        q50=float(np.quantile(data, 0.5)),
        q95=float(np.quantile(data, 0.95)),
        count=int(data.size),
    )


def _merge(intervals: Iterable[Tuple[float, float]]) -> List[Tuple[float, float]]:
    merged: List[Tuple[float, float]] = []
    for begin, end in sorted(intervals):
        if merged and begin <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((begin, end))
    return merged


def parallelism(intervals: Sequence[Tuple[float, float]]) -> Optional[float]:
    """Time-average number of executing actions over the instants where at least one runs."""
    busy = sum(end - begin for begin, end in _merge(intervals))
    if busy <= 0:
        return None
    work = sum(end - begin for begin, end in intervals)
    return work / busy


def idle_times(executions: Dict[str, List[Tuple[float, float]]]) -> List[float]:
    """Per device: active span minus busy time."""
    idle = []
    for device in sorted(executions):
        merged = _merge(executions[device])
        span = merged[-1][1] - merged[0][0]
        idle.append(max(0.0, span - sum(end - begin for begin, end in merged)))
    return idle


def false_positives(trace: SimTrace) -> int:
    """Failures declared for actions that physically completed anyway."""
    completed = {(e.payload["routine"], e.payload["action"]) for e in trace.of_type("exec_complete")}
    return sum(1 for e in trace.of_type("failure") if (e.payload["routine"], e.payload["action"]) in completed)


def compute_metrics(trace: SimTrace, policy: str = "", seed: int = 0, polling: bool = True) -> MetricsReport:
    arrivals: Dict[str, float] = {}
    started: Dict[Tuple[str, str], Tuple[str, float]] = {}
    executions: Dict[str, List[Tuple[float, float]]] = defaultdict(list)
    physical_end: Dict[Tuple[str, str], float] = {}
    detected_end: Dict[Tuple[str, str], float] = {}
    waits: List[float] = []
    latencies: List[float] = []
    polls: List[float] = []
    extra: List[float] = []
    requested = 0
    last_completion: Optional[float] = None

    for event in trace.events:
        p = event.payload
        key = (p.get("routine"), p.get("action"))
        if event.type == "arrival":
            arrivals[p["routine"]] = event.t
        elif event.type == "request":
            requested += 1
            waits.append(max(0.0, event.t - p["ready"]))
        elif event.type == "exec_start":
            started[key] = (p["device"], event.t)
        elif event.type == "exec_complete":
            physical_end[key] = event.t
            if key in started:
                device, begin = started[key]
                executions[device].append((begin, event.t))
        elif event.type == "complete":
            detected_end[key] = event.t
            last_completion = event.t if last_completion is None else max(last_completion, event.t)
        elif event.type == "failure":
            last_completion = event.t if last_completion is None else max(last_completion, event.t)
        elif event.type == "action_summary" and p.get("polled"):
            polls.append(p["polls"])
            extra.append(p["extra_polls"])
        elif event.type == "routine_finished":
            latencies.append(event.t - arrivals[p["routine"]])

    detections = [max(0.0, detected_end[k] - physical_end[k]) for k in sorted(detected_end) if k in physical_end]
    false_count = false_positives(trace)
    first_arrival = min(arrivals.values(), default=None)
    length = 0.0 if first_arrival is None or last_completion is None else last_completion - first_arrival
    all_intervals = [iv for device in sorted(executions) for iv in executions[device]]
    par = parallelism(all_intervals)

    report = MetricsReport(
        policy=policy,
        seed=seed,
        false_positive_rate=summarize([false_count / requested] if requested else []),
        schedule_length=summarize([length] if first_arrival is not None else []),
        wait_time=summarize(waits),
        idle_time=summarize(idle_times(executions)),
        latency=summarize(latencies),
        parallelism=summarize([par] if par is not None else []),
        unfinished_routines=len(trace.of_type("routine_unfinished")),
    )
    if polling:
        report.detection_time = summarize(detections)
        report.polls = summarize(polls)
        report.extra_polls_beyond_u = summarize(extra)
    return report


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for report in reports:
        writer.writerows(report.csv_rows())
    return buffer.getvalue()


def aggregate(reports: Sequence[MetricsReport]) -> str:
    """Mean / q50 / q95 of each metric's per-seed mean, one row per (policy, metric)."""
    by_policy: Dict[str, List[MetricsReport]] = defaultdict(list)
    for report in reports:
        by_policy[report.policy].append(report)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["policy", "metric", "mean", "q50", "q95", "seeds"])
    for policy in by_policy:
        group = by_policy[policy]
        for name in METRIC_NAMES:
            values = [r.metric(name).mean for r in group if r.metric(name) is not None]
            if not values:
                writer.writerow([policy, name, "n/a", "n/a", "n/a", len(group)])
                continue
            summary = summarize(values)
            writer.writerow([policy, name, f"{summary.mean:.6f}", f"{summary.q50:.6f}", f"{summary.q95:.6f}", len(group)])
    return buffer.getvalue()
