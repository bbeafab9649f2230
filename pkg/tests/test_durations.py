import numpy as np
import pytest

from durations.distribution import EmpiricalDistribution, drift_check, fit_weights, stability_trace, wasserstein
from durations.keys import Transition, TransitionKey
from durations.store import DistributionStore, TraceFormatError
from lib.errors import UntrainedDistributionError, ValidationError
from tests.conftest import key, uniform


def _fit(values, **kwargs) -> EmpiricalDistribution:
    return EmpiricalDistribution.fit(values, **kwargs)


def test_point_mass_upper_bound_within_one_bin():
    dist = _fit([3.0] * 10)

    assert abs(dist.upper_bound() - 3.0) <= dist.bin_width
    assert dist.pdf(100.0) == 0.0
    assert dist.pdf(-1.0) == 0.0


def test_uniform_samples_density_and_quantile(rng):
    dist = _fit(rng.uniform(1e-6, 10.0, size=10_000))

    assert dist.upper_bound() == pytest.approx(9.9, abs=0.2)
    assert dist.pdf(5.0) == pytest.approx(0.1, abs=0.02)


def test_exponential_upper_bound(rng):
    dist = _fit(rng.exponential(2.0, size=10_000))

    assert dist.upper_bound() == pytest.approx(-2.0 * np.log(0.01), abs=0.5)


def test_pdf_normalised_and_cdf_monotone(rng):
    dist = _fit(rng.gamma(2.0, 3.0, size=2_000))

    widths = np.diff(dist.bin_edges)
    assert float(np.sum(dist.densities * widths)) == pytest.approx(1.0, abs=1e-6)
    grid = np.linspace(0.0, dist.support_end, 500)
    values = dist.cdf(grid)
    assert values[0] == 0.0
    assert values[-1] == pytest.approx(1.0)
    assert np.all(np.diff(values) >= -1e-12)


def test_ppf_is_generalised_inverse(rng):
    dist = _fit(rng.normal(30.0, 3.0, size=1_000).clip(1.0))

    for y in (0.05, 0.25, 0.5, 0.9, 0.99):
        t = dist.ppf(y)
        assert dist.cdf(t) >= y - 1e-9
        assert dist.cdf(t - dist.bin_width) < y
    for t in (27.0, 30.0, 33.0):
        assert abs(dist.ppf(dist.cdf(t)) - t) <= dist.bin_width


def test_door_close_mean(rng):
    samples = rng.normal(3.19, 0.15, size=500)
    samples = samples - samples.mean() + 3.19

    assert _fit(samples).mean == pytest.approx(3.19, abs=0.01)


def test_untrained_queries_raise():
    dist = EmpiricalDistribution.empty()

    assert not dist.is_trained
    with pytest.raises(UntrainedDistributionError):
        dist.pdf(1.0)
    with pytest.raises(UntrainedDistributionError):
        dist.upper_bound()


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_observe_rejects_bad_durations(bad):
    with pytest.raises(ValidationError):
        EmpiricalDistribution.empty().observe(bad)


def test_observe_returns_new_version():
    first = EmpiricalDistribution.empty().observe(2.0)
    second = first.observe(4.0)

    assert first.n == 1
    assert second.n == 2
    assert second.mean == pytest.approx(3.0)


def test_window_follows_recent_samples():
    dist = _fit(list(np.full(50, 2.0)) + list(np.full(20, 8.0)), window=20)

    assert dist.n == 70
    assert dist.mean == pytest.approx(8.0)


def test_fit_weights_decay_by_age_past_window():
    assert fit_weights(5, window=2, decay=0.5).tolist() == [0.0625, 0.125, 0.25, 1.0, 1.0]
    assert fit_weights(5, window=2, decay=None).tolist() == [0.0, 0.0, 0.0, 1.0, 1.0]
    assert fit_weights(3, window=5, decay=0.5).tolist() == [1.0, 1.0, 1.0]


def test_decayed_history_keeps_some_weight():
    dist = _fit(list(np.full(50, 2.0)) + list(np.full(20, 8.0)), window=20, decay=0.98)
    old = 0.98 ** np.arange(20, 70)
    share = old.sum() / (old.sum() + 20)

    assert dist.n == 70
    assert dist.mean == pytest.approx(2.0 * share + 8.0 * (1 - share))
    assert dist.mean == pytest.approx(4.911, abs=1e-3)
    assert dist.cdf(5.0) == pytest.approx(share)
    assert dist.fitted_samples.size == 70


def test_store_reconverges_after_shift(rng):
    k = key("drift_0", "act")
    truth = _fit(rng.uniform(10.0, 20.0, size=5_000))
    decayed = DistributionStore(window=200, decay=0.98)
    unbounded = DistributionStore()
    for store in (decayed, unbounded):
        store.observe_many(k, rng.uniform(1e-6, 10.0, size=200))
    assert wasserstein(decayed.get(k), truth) == pytest.approx(10.0, abs=0.5)

    distances = []
    for n, duration in enumerate(rng.uniform(10.0, 20.0, size=200), start=1):
        decayed.observe(k, float(duration))
        unbounded.observe(k, float(duration))
        if n % 50 == 0:
            distances.append(wasserstein(decayed.get(k), truth))

    assert all(later < earlier for earlier, later in zip(distances, distances[1:]))
    assert distances[-1] <= 1.0
    assert wasserstein(unbounded.get(k), truth) > 4.0


def test_wasserstein_self_and_shift(rng):
    a = _fit(rng.uniform(1e-6, 10.0, size=5_000))
    b = _fit(rng.uniform(10.0, 20.0, size=5_000))
    c = _fit(rng.uniform(5.0, 15.0, size=5_000))

    assert wasserstein(a, a) == pytest.approx(0.0, abs=1e-12)
    assert wasserstein(a, b) == pytest.approx(10.0, abs=0.5)
    assert wasserstein(a, b) <= wasserstein(a, c) + wasserstein(c, b) + 1e-9


def test_drift_check_identical_samples():
    report = drift_check(_fit([3.0] * 11), window=10)

    assert report.stable
    assert report.wasserstein_distance == 0.0


def test_drift_check_needs_window_plus_one():
    with pytest.raises(ValidationError):
        drift_check(_fit([3.0] * 10), window=10)


def test_drift_check_detects_shift(rng):
    samples = np.concatenate([rng.uniform(1e-6, 10.0, 400), rng.uniform(10.0, 20.0, 400)])

    report = drift_check(_fit(samples), window=400)

    assert report.wasserstein_distance == pytest.approx(10.0, abs=0.5)


def test_gaussian_stream_stabilises_quickly():
    stable = 0
    for seed in range(20):
        stream = np.random.default_rng(seed).normal(30.0, 3.0, size=100)
        _, first = stability_trace(stream)
        if first is not None and first <= 25:
            stable += 1
    assert stable >= 15


def test_stability_stays_once_reached(rng):
    flags, first = stability_trace(rng.normal(30.0, 3.0, size=1_200))

    assert first is not None
    assert all(flags[400:])


def test_transition_key_validation_and_parse():
    parsed = TransitionKey.parse("door_0/close/start_to_complete")

    assert parsed == key()
    assert str(parsed) == "door_0/close/start_to_complete"
    with pytest.raises(ValueError):
        TransitionKey(device_id=" ", action_kind="close", transition=Transition.ACK_TO_START)
    with pytest.raises(ValueError):
        TransitionKey.parse("door_0/close")


def test_from_histogram_rejects_uneven_bins():
    with pytest.raises(ValidationError):
        EmpiricalDistribution.from_histogram([0.0, 1.0, 3.0], [1.0, 1.0])


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_store_loads_traces_per_key(tmp_path):
    path = _write(
        tmp_path / "traces.csv",
        "device,action,transition,duration_s\n"
        "door_0,close,start_to_complete,3.1\n"
        "door_0,close,start_to_complete,3.3\n"
        "door_0,close,ack_to_start,0.2\n"
        "shade_1,up,start_to_complete,29.5\n",
    )
    store = DistributionStore()

    counts = store.load_traces(path)

    assert {str(k): n for k, n in counts.items()} == {
        "door_0/close/start_to_complete": 2,
        "door_0/close/ack_to_start": 1,
        "shade_1/up/start_to_complete": 1,
    }
    assert len(store) == 3
    assert store.get(key()).mean == pytest.approx(3.2)


def test_store_reports_malformed_rows_with_line_numbers(tmp_path):
    path = _write(
        tmp_path / "traces.csv",
        "device,action,transition,duration_s\n"
        "door_0,close,start_to_complete,3.1\n"
        "door_0,close,sideways,3.1\n"
        "door_0,close,start_to_complete,-2\n",
    )

    with pytest.raises(TraceFormatError) as info:
        DistributionStore().load_traces(path)

    assert [line for line, _ in info.value.problems] == [3, 4]
    assert "line 3" in str(info.value)


def test_store_rejects_empty_trace(tmp_path):
    with pytest.raises(ValidationError):
        DistributionStore().load_traces(_write(tmp_path / "empty.csv", ""))


def test_store_export_round_trip_keeps_quantiles(tmp_path, rng):
    store = DistributionStore()
    store.observe_many(key(), rng.normal(3.19, 0.15, size=300))
    path = tmp_path / "distributions.json"

    store.save(path)
    loaded = DistributionStore.load(path)

    assert loaded.keys() == store.keys()
    assert loaded.get(key()).upper_bound() == pytest.approx(store.get(key()).upper_bound(), abs=1e-9)
    assert loaded.is_trained(key())


def test_store_training_threshold():
    store = DistributionStore(min_training_samples=3)
    store.observe(key(), 3.0)
    store.observe(key(), 3.2)

    assert not store.is_trained(key())
    store.observe(key(), 3.1)
    assert store.is_trained(key())


def test_uniform_fixture_is_exact():
    dist = uniform()

    assert dist.upper_bound() == pytest.approx(9.9)
    assert dist.mean == pytest.approx(5.0)
