import csv
import io
import json
from pathlib import Path

import pytest

from cli.commands import compare_reports, main
from sim.models import METRIC_NAMES, MetricSummary, MetricsReport

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
DOOR_KEY = "door_0/close/start_to_complete"


@pytest.fixture
def fitted(tmp_path, capsys):
    out = tmp_path / "fit"
    assert main(["fit", "--traces", str(DATA_DIR / "traces.csv"), "--out", str(out)]) == 0
    capsys.readouterr()
    return out / "distributions.json"


def _report(path: Path, **means) -> Path:
    report = MetricsReport(policy=path.stem, **{name: MetricSummary(mean=value, count=1) for name, value in means.items()})
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def test_no_command_prints_help(capsys):
    assert main([]) == 0
    assert "usage: rasc" in capsys.readouterr().out


def test_fit_writes_every_key(tmp_path, capsys):
    out = tmp_path / "fit"

    assert main(["fit", "--traces", str(DATA_DIR / "traces.csv"), "--out", str(out)]) == 0
    documents = json.loads((out / "distributions.json").read_text())
    assert len(documents) == 9
    assert DOOR_KEY in {d["key"] for d in documents}
    assert f"{DOOR_KEY}  n=60" in capsys.readouterr().out


def test_fit_refuses_thin_keys(tmp_path, capsys):
    traces = tmp_path / "traces.csv"
    traces.write_text("device,action,transition,duration_s\ndoor_0,close,start_to_complete,3.1\n")

    assert main(["fit", "--traces", str(traces), "--out", str(tmp_path / "fit")]) == 1
    assert "error: too_few_samples:" in capsys.readouterr().err
    assert not (tmp_path / "fit" / "distributions.json").exists()


def test_fit_reports_bad_rows(tmp_path, capsys):
    traces = tmp_path / "traces.csv"
    traces.write_text("device,action,transition,duration_s\ndoor_0,close,start_to_complete,-1\n")

    assert main(["fit", "--traces", str(traces), "--out", str(tmp_path / "fit")]) == 1
    assert "error: invalid_input:" in capsys.readouterr().err


def test_plan_uses_class_tolerance(fitted, capsys):
    assert main(["plan", "--distributions", str(fitted), "--key", DOOR_KEY]) == 0

    plan = json.loads(capsys.readouterr().out)
    assert plan["key"] == DOOR_KEY
    assert plan["Q_w"] == 2.0
    assert plan["polls"] == sorted(plan["polls"])
    assert plan["polls"][-1] == pytest.approx(plan["U"])
    assert plan["k"] == len(plan["polls"])


def test_plan_qw_override(fitted, capsys):
    assert main(["--qw", "door=0.5", "plan", "--distributions", str(fitted), "--key", DOOR_KEY]) == 0
    tight = json.loads(capsys.readouterr().out)
    assert main(["plan", "--distributions", str(fitted), "--key", DOOR_KEY]) == 0
    loose = json.loads(capsys.readouterr().out)

    assert tight["Q_w"] == 0.5
    assert tight["k"] >= loose["k"]


@pytest.mark.parametrize(
    "key, code",
    [("door_0/close/start_to_complete_x", "invalid_input"), ("oven_9/bake/start_to_complete", "unknown_key")],
)
def test_plan_bad_key(fitted, capsys, key, code):
    assert main(["plan", "--distributions", str(fitted), "--key", key]) == 1
    assert f"error: {code}:" in capsys.readouterr().err


def test_run_writes_reports_and_aggregate(tmp_path, capsys):
    out = tmp_path / "reports"

    assert main(["--seed", "0", "run", "--config", str(DATA_DIR / "experiment.json"), "--out", str(out), "--save-traces"]) == 0

    names = sorted(p.name for p in out.glob("*.json"))
    assert names == ["adaptive_dagtl_stf_seed0.json", "adaptive_fcfs_seed0.json", "periodic_dagtl_stf_seed0.json"]
    report = MetricsReport(**json.loads((out / "adaptive_dagtl_stf_seed0.json").read_text()))
    assert report.unfinished_routines == 0
    assert report.polls is not None
    rows = list(csv.reader(io.StringIO((out / "aggregate.csv").read_text())))
    assert rows[0] == ["policy", "metric", "mean", "q50", "q95", "seeds"]
    assert len(rows) == 1 + 3 * len(METRIC_NAMES)
    assert (out / "traces" / "adaptive_fcfs_seed0.jsonl").read_text().strip()
    assert "household: 3 report(s)" in capsys.readouterr().out


def test_run_is_repeatable(tmp_path):
    for name in ("a", "b"):
        argv = ["--seed", "1", "run", "--config", str(DATA_DIR / "experiment.json"), "--out", str(tmp_path / name)]
        assert main(argv) == 0

    for path in (tmp_path / "a").glob("*.json"):
        assert path.read_text() == (tmp_path / "b" / path.name).read_text()


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--config", "missing.json", "--out", "x"],
        ["--qw", "door", "run", "--config", str(DATA_DIR / "experiment.json"), "--out", "x"],
        ["--slo", "1.5", "run", "--config", str(DATA_DIR / "experiment.json"), "--out", "x"],
    ],
    ids=["missing_config", "bad_qw", "bad_slo"],
)
def test_run_rejects_bad_input(tmp_path, monkeypatch, capsys, argv):
    monkeypatch.chdir(tmp_path)

    assert main(argv) == 1
    assert "error: " in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_run_config_needs_existing_files(tmp_path, capsys):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({"name": "x", "workload": "nowhere.json", "devices": "devices.json", "seeds": [0]}))

    assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 1
    assert "workload file not found" in capsys.readouterr().err


def test_compare_deltas():
    base = MetricsReport(latency=MetricSummary(mean=10.0), wait_time=MetricSummary(mean=0.0), idle_time=MetricSummary(mean=0.0))
    other = MetricsReport(
        latency=MetricSummary(mean=8.0),
        wait_time=MetricSummary(mean=0.0),
        idle_time=MetricSummary(mean=1.0),
        polls=MetricSummary(mean=4.0),
    )

    rows = {row[0]: row for row in csv.reader(io.StringIO(compare_reports([base, other], ["base", "other"])))}
    assert rows["metric"] == ["metric", "base", "other", "other delta"]
    assert rows["latency"][3] == "-20.00%"
    assert rows["wait_time"][3] == "0.00%"
    assert rows["idle_time"][3] == "n/a"
    assert rows["polls"] == ["polls", "n/a", "4.000000", "n/a"]


def test_compare_command(tmp_path, capsys):
    first = _report(tmp_path / "first.json", latency=4.0)
    second = _report(tmp_path / "second.json", latency=5.0)
    out = tmp_path / "table.csv"

    assert main(["compare", str(first), str(second), "--out", str(out)]) == 0
    assert "latency,4.000000,5.000000,+25.00%" in capsys.readouterr().out
    assert out.read_text().startswith("metric,first,second,second delta")


def test_compare_errors(tmp_path, capsys):
    good = _report(tmp_path / "good.json", latency=1.0)
    foreign = tmp_path / "foreign.json"
    foreign.write_text(json.dumps({"latency": 1.0}))

    assert main(["compare", str(good)]) == 1
    assert "too_few_reports" in capsys.readouterr().err
    assert main(["compare", str(good), str(foreign)]) == 1
    assert "schema_mismatch" in capsys.readouterr().err
    assert main(["compare", str(good), str(tmp_path / "gone.json")]) == 1
    assert "missing_report" in capsys.readouterr().err


def test_unknown_experiment_is_rejected():
    assert main(["experiment", "nonsense"]) == 1


@pytest.mark.slow
def test_convergence_experiment(tmp_path, capsys):
    out = tmp_path / "convergence.csv"

    assert main(["--seed", "3", "experiment", "convergence", "--out", str(out)]) == 0
    assert out.read_text().startswith("seed,samples_to_stability")
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["experiment"] == "convergence"
    assert summary["summary"]["stable_within_25"] >= 0.9
