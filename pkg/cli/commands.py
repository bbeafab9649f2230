"""`fit`, `plan`, `run`, `compare` and `experiment` subcommands.

Results go to stdout (or files); diagnostics go to stderr as
`error: <code>: <message>`. Exit codes: 0 success, 1 invalid input, 2 runtime.
"""

import argparse
import csv
import inspect
import io
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError as PydanticValidationError

from cli.config import ExperimentConfig, PolicyChoice, load_devices, load_experiment_config, parse_qw
from durations.keys import TransitionKey
from durations.store import DistributionStore
from lib import console
from lib.errors import RascError
from lib.settings import get_settings
from pollplan.adaptive import find_polls
from pollplan.models import PollPlanRequest
from routine.parser import load_workload
from sim.engine import SimResult, run
from sim.experiments import EXPERIMENTS
from sim.metrics import aggregate
from sim.models import METRIC_NAMES, MetricsReport, WorkloadSpec

MIN_FIT_SAMPLES = 3
CELL_TIMEOUT = 600


class CommandError(RuntimeError):
    """Raised by a subcommand with the code and exit status to report."""

    def __init__(self, code: str, message: str, *, hint: Optional[str] = None, exit_code: int = 1):
        super().__init__(message)
        self.code = code
        self.message = message
        self.hint = hint
        self.exit_code = exit_code


# ---- fit ----
def cmd_fit(traces, out, min_samples: int = MIN_FIT_SAMPLES) -> Dict[str, dict]:
    store = DistributionStore(min_training_samples=min_samples)
    counts = store.load_traces(traces)
    short = sorted(str(key) for key, n in counts.items() if n < min_samples)
    if short:
        raise CommandError(
            "too_few_samples",
            f"{len(short)} key(s) have fewer than {min_samples} samples: {', '.join(short)}",
            hint="collect more training runs for these actions",
        )
    summary = {}
    for key in store.keys():
        dist = store.get(key)
        summary[str(key)] = {"n": dist.n, "mean": dist.mean, "U": dist.upper_bound()}
        print(f"{key}  n={dist.n}  mean={dist.mean:.4f}s  U={dist.upper_bound():.4f}s")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    store.save(out / "distributions.json")
    console.success(f"{len(summary)} distributions written to {out / 'distributions.json'}")
    return summary


# ---- plan ----
def cmd_plan(distributions, key: str, Q_w: float, slo: float, min_poll_interval: float) -> dict:
    store = DistributionStore.load(distributions)
    transition_key = TransitionKey.parse(key)
    dist = store.get(transition_key)
    if dist is None:
        raise CommandError("unknown_key", f"No distribution for {key} in {distributions}")
    plan = find_polls(PollPlanRequest(dist=dist, Q_w=Q_w, slo=slo, min_poll_interval=min(min_poll_interval, Q_w)))
    export = plan.to_export(str(transition_key))
    print(json.dumps(export, indent=2))
    return export


# ---- run ----
def _cell(
    config: ExperimentConfig,
    choice: PolicyChoice,
    seed: int,
    workload: WorkloadSpec,
    devices,
    store: Optional[DistributionStore],
) -> SimResult:
    console.info("run", f"{choice.slug} seed={seed}")
    return run(workload, devices, config.policy_config(choice), seed=seed, store=store)


def cmd_run(config: ExperimentConfig, out, workers: Optional[int] = None, save_traces: bool = False) -> List[Path]:
    routines = load_workload(config.workload)
    devices = load_devices(config.devices)
    store = None
    if config.traces is not None:
        settings = get_settings()
        store = DistributionStore(
            window=settings.drift_window,
            decay=settings.drift_decay,
            min_training_samples=settings.min_training_samples,
        )
        store.load_traces(config.traces)

    cells: List[Tuple[PolicyChoice, int]] = [(choice, seed) for choice in config.policies for seed in config.seeds]
    results: Dict[Tuple[str, int], SimResult] = {}
    with ThreadPoolExecutor(max_workers=workers or get_settings().plan_workers) as executor:
        futures = {
            (choice.slug, seed): executor.submit(
                _cell, config, choice, seed, WorkloadSpec(routines=routines, seed=seed), devices, store
            )
            for choice, seed in cells
        }
        for (slug, seed), future in futures.items():
            try:
                results[(slug, seed)] = future.result(timeout=CELL_TIMEOUT)
            except ValueError as e:
                raise CommandError("invalid_cell", f"{slug} seed {seed}: {type(e).__name__}: {str(e)}")
            except Exception as e:
                raise CommandError("cell_failed", f"{slug} seed {seed}: {type(e).__name__}: {str(e)}", exit_code=2)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for choice, seed in cells:
        result = results[(choice.slug, seed)]
        path = out / f"{choice.slug}_seed{seed}.json"
        path.write_text(result.report.to_json() + "\n", encoding="utf-8")
        written.append(path)
        if save_traces:
            trace_dir = out / "traces"
            trace_dir.mkdir(exist_ok=True)
            (trace_dir / f"{choice.slug}_seed{seed}.jsonl").write_text(result.trace.to_jsonl(), encoding="utf-8")
    summary = out / "aggregate.csv"
    summary.write_text(aggregate([results[(c.slug, s)].report for c, s in cells]), encoding="utf-8")
    written.append(summary)
    print(f"{config.name}: {len(cells)} report(s) and aggregate written to {out}")
    return written


# ---- compare ----
def _load_report(path) -> MetricsReport:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CommandError("missing_report", f"Report not found: {path}")
    except json.JSONDecodeError as e:
        raise CommandError("bad_report", f"{path} is not valid JSON: {e}")
    if not isinstance(document, dict) or set(document) != set(MetricsReport.model_fields):
        raise CommandError("schema_mismatch", f"{path} does not have the metrics report schema")
    try:
        return MetricsReport(**document)
    except PydanticValidationError as e:
        raise CommandError("schema_mismatch", f"{path}: {e.errors()[0]['msg']}")


def _delta(value: Optional[float], base: Optional[float]) -> str:
    if value is None or base is None:
        return "n/a"
    if base == 0:
        return "0.00%" if value == 0 else "n/a"
    pct = 100.0 * (value - base) / abs(base)
    return "0.00%" if abs(pct) < 0.005 else f"{pct:+.2f}%"


def compare_reports(reports: Sequence[MetricsReport], labels: Sequence[str]) -> str:
    """One row per metric: each report's mean and its delta against the first."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = ["metric", labels[0]]
    for label in labels[1:]:
        header += [label, f"{label} delta"]
    writer.writerow(header)
    for name in METRIC_NAMES:
        means = [r.metric(name).mean if r.metric(name) is not None else None for r in reports]
        row = [name, "n/a" if means[0] is None else f"{means[0]:.6f}"]
        for value in means[1:]:
            row += ["n/a" if value is None else f"{value:.6f}", _delta(value, means[0])]
        writer.writerow(row)
    return buffer.getvalue()


def cmd_compare(paths: Sequence[str], out=None) -> str:
    if len(paths) < 2:
        raise CommandError("too_few_reports", "compare needs at least two reports")
    reports = [_load_report(p) for p in paths]
    labels = [Path(p).stem for p in paths]
    table = compare_reports(reports, labels)
    if out:
        Path(out).write_text(table, encoding="utf-8")
    print(table, end="")
    return table


# ---- experiment ----
def cmd_experiment(name: str, out=None, seed: Optional[int] = None, slo: Optional[float] = None) -> dict:
    experiment = EXPERIMENTS.get(name)
    if experiment is None:
        raise CommandError(
            "unknown_experiment", f"Unknown experiment {name!r}", hint=f"choose one of: {', '.join(EXPERIMENTS)}"
        )
    accepted = inspect.signature(experiment).parameters
    kwargs = {}
    if seed is not None:
        if "seed" in accepted:
            kwargs["seed"] = seed
        elif "seeds" in accepted:
            kwargs["seeds"] = tuple(range(seed, seed + 10))
    if slo is not None and "slo" in accepted:
        kwargs["slo"] = slo
    result = experiment(**kwargs)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(result.to_csv(), encoding="utf-8")
    else:
        print(result.to_csv(), end="")
    print(json.dumps({"experiment": result.name, "summary": result.summary}, sort_keys=True))
    return result.summary


# ---- parser ----
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rasc", description="Action lifecycle hub: fitting, planning and simulation")
    parser.add_argument("--seed", type=int, help="Run a single seed instead of the configured list")
    parser.add_argument("--slo", type=float, help="Fraction of events to detect within Q_w")
    parser.add_argument("--qw", action="append", metavar="CLASS=SECONDS", help="Detection tolerance override (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Tagged progress lines on stderr")
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    fit = subparsers.add_parser("fit", help="Fit duration distributions from a trace CSV")
    fit.add_argument("--traces", required=True, help="CSV with columns device,action,transition,duration_s")
    fit.add_argument("--out", required=True, help="Output directory for distributions.json")
    fit.set_defaults(handler=_handle_fit)

    plan = subparsers.add_parser("plan", help="Print the poll plan for one transition key")
    plan.add_argument("--distributions", required=True, help="distributions.json written by fit")
    plan.add_argument("--key", required=True, help="device/action/transition")
    plan.add_argument("--class", dest="action_class", help="Action class used for the default Q_w")
    plan.set_defaults(handler=_handle_plan)

    run_cmd = subparsers.add_parser("run", help="Simulate every (policy, seed) cell of an experiment config")
    run_cmd.add_argument("--config", required=True, help="Experiment config JSON")
    run_cmd.add_argument("--out", required=True, help="Report directory")
    run_cmd.add_argument("--workers", type=int, help="Worker threads (default RASC_PLAN_WORKERS)")
    run_cmd.add_argument("--save-traces", action="store_true", help="Also write each cell's trace as JSON lines")
    run_cmd.set_defaults(handler=_handle_run)

    compare = subparsers.add_parser("compare", help="Relative metric deltas against the first report")
    compare.add_argument("reports", nargs="+", help="Report JSON files written by run")
    compare.add_argument("--out", help="Also write the table to this CSV file")
    compare.set_defaults(handler=_handle_compare)

    experiment = subparsers.add_parser("experiment", help="Run a named experiment")
    experiment.add_argument("name", choices=sorted(EXPERIMENTS), help="Experiment name")
    experiment.add_argument("--out", help="CSV output path (stdout when omitted)")
    experiment.set_defaults(handler=_handle_experiment)
    return parser


def _handle_fit(args):
    return cmd_fit(args.traces, args.out)


def _handle_plan(args):
    settings = get_settings()
    overrides = parse_qw(args.qw)
    action_class = args.action_class or TransitionKey.parse(args.key).device_id.split("_")[0]
    Q_w = overrides.get(action_class) or settings.detection_tolerance(action_class)
    return cmd_plan(args.distributions, args.key, Q_w, args.slo or settings.slo, settings.min_poll_interval)


def _handle_run(args):
    overrides: dict = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.slo is not None:
        overrides["slo"] = args.slo
    if args.qw:
        overrides["qw"] = parse_qw(args.qw)
    config = load_experiment_config(args.config, overrides)
    return cmd_run(config, args.out, workers=args.workers, save_traces=args.save_traces)


def _handle_compare(args):
    return cmd_compare(args.reports, args.out)


def _handle_experiment(args):
    return cmd_experiment(args.name, args.out, seed=args.seed, slo=args.slo)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if getattr(args, "handler", None) is None:
        parser.print_help()
        return 0
    console.set_verbose(args.verbose or get_settings().verbose)
    try:
        args.handler(args)
    except CommandError as e:
        console.error(e.code, e.message + (f" (hint: {e.hint})" if e.hint else ""))
        return e.exit_code
    except ValueError as e:
        console.error("invalid_input", f"{type(e).__name__}: {str(e)}")
        return 1
    except (RascError, OSError) as e:
        console.error("runtime", f"{type(e).__name__}: {str(e)}")
        return 2
    return 0
