import itertools
import random
import time

import numpy as np
import pytest
from scipy import stats

from durations.distribution import EmpiricalDistribution
from durations.keys import Transition
from durations.store import DistributionStore
from lib.errors import UnsupportableToleranceError, UntrainedDistributionError, ValidationError
from lib.errors import InfeasibleBudgetError
from pollplan import adaptive
from pollplan.adaptive import (
    _BudgetOracle,
    coverage,
    expected_detection,
    find_polls,
    second_derivative_check,
    solve_recurrence,
)
from pollplan.baselines import periodic_plan, vopt_plan
from pollplan.cache import PlanCache
from pollplan.models import FailureDeclared, PollPlanRequest
from pollplan.post_bound import PostBoundBackoff, post_u_plan
from sim.corpus import POLLING_CLASSES
from tests.conftest import key, uniform


def _grid_optimum(dist: EmpiricalDistribution, k: int, U: float, steps: int = 200) -> float:
    grid = [U * i / steps for i in range(1, steps)]
    best = float("inf")
    for inner in itertools.combinations(grid, k - 1):
        best = min(best, expected_detection(dist, list(inner) + [U]))
    return best


def _exact(cdf, support_end: float, bins: int = 400) -> EmpiricalDistribution:
    edges = np.linspace(0.0, support_end, bins + 1)
    return EmpiricalDistribution.from_histogram(edges, np.diff(cdf(edges)))


def _corpus():
    yield uniform()
    yield _exact(lambda t: 1.0 - np.exp(-t / 2.0), 20.0)
    # triangular on [0, 10] peaking at 5
    yield _exact(lambda t: np.where(t <= 5.0, t * t / 50.0, 1.0 - (10.0 - t) ** 2 / 50.0), 10.0)


def _laws():
    """Twenty smooth shapes: heavy and light tails, skew, two modes and the device laws."""
    laws = [stats.expon(scale=s) for s in (1.0, 2.0, 5.0)]
    laws += [stats.gamma(a) for a in (2.0, 4.0, 8.0)]
    laws += [stats.lognorm(s, scale=5.0) for s in (0.3, 0.6)]
    laws += [stats.weibull_min(c, scale=5.0) for c in (3.0,)]
    laws += [stats.beta(2.0, 5.0, scale=10.0)]
    laws += [stats.norm(law.mean, law.sd) for law in POLLING_CLASSES]
    shapes = [_exact(law.cdf, float(law.ppf(0.9995))) for law in laws]
    shapes.append(_exact(lambda t: 0.5 * stats.norm.cdf(t, 4.0, 1.0) + 0.5 * stats.norm.cdf(t, 6.5, 1.2), 11.0))
    shapes.append(_exact(lambda t: 0.3 * stats.norm.cdf(t, 3.0, 0.8) + 0.7 * stats.norm.cdf(t, 6.0, 1.2), 11.0))
    return shapes + list(_corpus())


def test_expected_detection_uniform_equal_spacing(uniform_dist):
    assert expected_detection(uniform_dist, [2, 4, 6, 8, 10]) == pytest.approx(1.0, abs=0.05)


def test_expected_detection_single_poll_is_u_minus_mean(rng):
    dist = EmpiricalDistribution.fit(rng.gamma(3.0, 2.0, size=2_000))
    U = dist.support_end

    assert expected_detection(dist, [U]) == pytest.approx(U - dist.histogram_mean, abs=1e-9)


def test_expected_detection_point_mass():
    dist = EmpiricalDistribution.fit([3.0] * 10)

    assert expected_detection(dist, [3.0]) == pytest.approx(0.0, abs=dist.bin_width)


def test_expected_detection_rejects_unordered(uniform_dist):
    with pytest.raises(ValidationError):
        expected_detection(uniform_dist, [4.0, 2.0])


def test_solve_recurrence_uniform_is_equally_spaced(uniform_dist):
    plan = solve_recurrence(uniform_dist, 5, 10.0)

    assert plan.polls == pytest.approx([2, 4, 6, 8, 10], abs=1e-3)
    assert plan.expected_detection == pytest.approx(1.0, abs=0.05)
    assert plan.valid_minimum


def test_solve_recurrence_single_poll_at_u(uniform_dist):
    assert solve_recurrence(uniform_dist, 1, 10.0).polls == [10.0]


def test_solve_recurrence_requires_training():
    with pytest.raises(UntrainedDistributionError):
        solve_recurrence(EmpiricalDistribution.empty(), 3, 10.0)


@pytest.mark.parametrize("k", [2, 3])
def test_solve_recurrence_beats_grid_search(k):
    for dist in _corpus():
        U = dist.upper_bound()
        plan = solve_recurrence(dist, k, U)
        assert plan.expected_detection <= _grid_optimum(dist, k, U) + 1e-3 * U


@pytest.mark.slow
@pytest.mark.parametrize("k", [2, 3, 4])
def test_solve_recurrence_beats_grid_search_on_twenty_laws(k):
    laws = _laws()
    assert len(laws) == 20
    # four polls over a 200-step grid is 1.3M placements per law, so that case uses a coarser grid
    steps = 200 if k < 4 else 60
    for dist in laws:
        U = dist.upper_bound()
        plan = solve_recurrence(dist, k, U)
        assert plan.expected_detection <= _grid_optimum(dist, k, U, steps) + 1e-3 * U


def _slope(dist, polls, i, h):
    up, down = list(polls), list(polls)
    up[i] += h
    down[i] -= h
    return (expected_detection(dist, up) - expected_detection(dist, down)) / (2.0 * h)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_recurrence_placement_is_stationary(k):
    for dist in _corpus():
        polls = solve_recurrence(dist, k, dist.upper_bound()).polls
        h = dist.bin_width / 10.0
        # the last poll is pinned at U; every free poll sits where Q is flat
        for i in range(k - 1):
            assert abs(_slope(dist, polls, i, h)) <= 0.02


def test_find_polls_uniform_strict_slo(uniform_dist):
    plan = find_polls(PollPlanRequest(dist=uniform_dist, U=10.0, Q_w=2.0, slo=1.0, min_poll_interval=1.0))

    assert plan.k == 5
    assert plan.polls == pytest.approx([2, 4, 6, 8, 10], abs=1e-3)
    assert all(gap <= 2.0 + 1e-4 for gap in plan.gaps())


def test_find_polls_single_poll_when_tolerance_covers_u(uniform_dist):
    plan = find_polls(PollPlanRequest(dist=uniform_dist, U=10.0, Q_w=10.0, slo=0.9, min_poll_interval=1.0))

    assert plan.k == 1
    assert plan.polls == [10.0]
    assert plan.coverage == pytest.approx(1.0)


def test_find_polls_budget_monotone_in_slo():
    for dist in _corpus():
        U = dist.upper_bound()
        Q_w = U / 6
        relaxed = find_polls(PollPlanRequest(dist=dist, Q_w=Q_w, slo=0.9, min_poll_interval=Q_w / 10))
        strict = find_polls(PollPlanRequest(dist=dist, Q_w=Q_w, slo=1.0, min_poll_interval=Q_w / 10))
        assert relaxed.k <= strict.k
        assert relaxed.coverage >= 0.9 - 1e-9


def test_find_polls_is_minimal(rng):
    dist = EmpiricalDistribution.fit(rng.normal(29.64, 1.2, size=400))
    req = PollPlanRequest(dist=dist, Q_w=3.0, slo=0.9, min_poll_interval=1.0)

    plan = find_polls(req)

    assert plan.coverage >= 0.9
    if plan.k > 1:
        assert not _BudgetOracle(req, dist.upper_bound())(plan.k - 1)


def test_plan_request_rejects_unsupportable_tolerance(uniform_dist):
    with pytest.raises(UnsupportableToleranceError):
        find_polls(PollPlanRequest(dist=uniform_dist, Q_w=0.5, min_poll_interval=1.0))


def test_coverage_examples(uniform_dist):
    assert coverage(uniform_dist, [10.0], 10.0, 10.0) == pytest.approx(1.0)
    assert coverage(uniform_dist, [2, 4, 6, 8, 10], 1.0, 10.0) == pytest.approx(0.5, abs=0.02)
    assert coverage(uniform_dist, [], 1.0, 10.0) == 0.0


def test_coverage_counts_mass_past_u_as_missed(uniform_dist):
    assert coverage(uniform_dist, [4.0, 8.0], 4.0, 8.0) == pytest.approx(0.8, abs=1e-9)
    assert coverage(uniform_dist, [8.0], 2.0, 8.0) == pytest.approx(0.2, abs=1e-9)


def test_find_polls_meets_slo_on_unconditional_mass(uniform_dist):
    # with U=8 only 80% of the mass is reachable; two polls cover 60% of it
    plan = find_polls(PollPlanRequest(dist=uniform_dist, U=8.0, Q_w=3.0, slo=0.75, min_poll_interval=1.0))

    assert plan.k == 3
    assert plan.coverage == pytest.approx(0.8, abs=1e-6)


def test_find_polls_rejects_slo_above_mass_below_u(uniform_dist):
    with pytest.raises(InfeasibleBudgetError):
        find_polls(PollPlanRequest(dist=uniform_dist, U=8.0, Q_w=4.0, slo=0.9, min_poll_interval=1.0))


def test_second_derivative_flags_poll_on_steep_rise():
    # 0.1 mass spread thin over (0, 5], then a ramp to a plateau on (6, 10]
    h = 0.89 / 4.5
    ramp = _exact(
        lambda t: np.where(
            t <= 5.0,
            0.02 * t,
            np.where(
                t <= 6.0,
                0.1 + 0.02 * (t - 5.0) + (h - 0.02) * (t - 5.0) ** 2 / 2.0,
                0.1 + (0.02 + h) / 2.0 + h * (t - 6.0),
            ),
        ),
        10.0,
    )

    check = second_derivative_check(ramp, [5.5, 10.0])

    assert check.values[0] < 0
    assert not check.free_nonnegative


def test_find_polls_steps_past_invalid_minimum(monkeypatch, uniform_dist):
    real_check = adaptive.second_derivative_check

    def saddle_below_three_polls(dist, polls):
        check = real_check(dist, polls)
        if len(polls) < 3:
            return check.model_copy(update={"free_nonnegative": False})
        return check

    monkeypatch.setattr(adaptive, "second_derivative_check", saddle_below_three_polls)

    # two polls at {5, 10} already cover everything, but that placement is rejected
    plan = find_polls(PollPlanRequest(dist=uniform_dist, U=10.0, Q_w=5.0, slo=0.9, min_poll_interval=1.0))

    assert plan.k == 3
    assert plan.valid_minimum
    assert plan.strategy == "adaptive"


def test_find_polls_uses_recurrence_placements_only():
    for dist in _corpus():
        U = dist.upper_bound()
        plan = find_polls(PollPlanRequest(dist=dist, Q_w=U / 4, slo=0.9, min_poll_interval=U / 100))
        assert plan.valid_minimum
        assert "equal_spacing_fallback" not in plan.flags
        assert plan.polls == pytest.approx(solve_recurrence(dist, plan.k, U).polls)


def test_periodic_plan_examples():
    assert periodic_plan(10.0, 2.0).polls == [2.0, 4.0, 6.0, 8.0, 10.0]
    assert periodic_plan(10.0, 3.0).polls == [3.0, 6.0, 9.0, 12.0]
    assert periodic_plan(432.17, 30.0).k == 15


def test_vopt_uniform_histogram_splits_evenly():
    dist = uniform(16.0, 16)

    plan = vopt_plan(dist, 4, 16.0)

    assert plan.polls == pytest.approx([4.0, 8.0, 12.0, 16.0])


def test_vopt_point_mass_single_bucket():
    dist = EmpiricalDistribution.fit([3.0] * 10)
    U = dist.upper_bound()

    plan = vopt_plan(dist, 3, U)

    assert plan.polls[-1] == U
    assert all(p <= U for p in plan.polls)
    assert plan.expected_detection == pytest.approx(0.0, abs=dist.bin_width)


def test_vopt_rejects_budget_above_bins(uniform_dist):
    with pytest.raises(ValidationError):
        vopt_plan(uniform_dist, 11, 10.0)


def test_vopt_detection_ratio_in_band():
    dist = _exact(lambda t: 1.0 - np.exp(-t / 2.0), 20.0, bins=256)
    plan = find_polls(PollPlanRequest(dist=dist, Q_w=2.0, slo=0.9, min_poll_interval=0.1))

    baseline = vopt_plan(dist, plan.k, dist.upper_bound())

    assert 0.3 <= plan.expected_detection / baseline.expected_detection <= 3.0


def test_recurrence_is_faster_than_vopt():
    dist = _exact(lambda t: 1.0 - np.exp(-t / 2.0), 20.0, bins=256)
    U = dist.upper_bound()
    k = find_polls(PollPlanRequest(dist=dist, Q_w=2.0, slo=0.9, min_poll_interval=0.1)).k

    started = time.perf_counter()
    solve_recurrence(dist, k, U)
    recurrence_seconds = time.perf_counter() - started

    assert recurrence_seconds < vopt_plan(dist, k, U).compute_seconds


def test_post_u_progress_extrapolation():
    assert post_u_plan(None, 30.0, progress=0.8, elapsed=100.0) == pytest.approx(25.0)
    assert post_u_plan(None, 3.0, progress=0.5, elapsed=10.0) == pytest.approx(3.0)


def test_post_u_backoff_lands_on_deadline():
    backoff = PostBoundBackoff(16.0, base_gap=1.0)

    offsets = []
    while True:
        step = backoff.next()
        if isinstance(step, FailureDeclared):
            break
        offsets.append(step)

    assert offsets == [1.0, 2.0, 4.0, 8.0, 1.0]
    assert sum(offsets) == pytest.approx(16.0)
    assert all(gap <= 16.0 for gap in offsets)


def test_post_u_backoff_never_exceeds_tolerance():
    rng = random.Random(7)
    for _ in range(300):
        Q_w = rng.uniform(0.5, 30.0)
        backoff = PostBoundBackoff(Q_w, base_gap=rng.uniform(0.1, 2.0))
        if rng.random() < 0.5:
            backoff.extend(rng.uniform(0.0, 5.0 * Q_w))
        elapsed = rng.uniform(1.0, 100.0)
        previous = 0.0
        for _ in range(1000):
            progress = rng.uniform(0.05, 0.95) if rng.random() < 0.2 else None
            step = backoff.next(progress=progress, elapsed=elapsed)
            if isinstance(step, FailureDeclared):
                break
            assert 0.0 < step <= Q_w + 1e-9
            elapsed += step
            previous += step
        else:
            pytest.fail("backoff never declared failure")
        # failure is declared at the offset of the last poll
        assert step.at_offset == pytest.approx(previous)


def test_plan_cache_falls_back_for_untrained_keys():
    store = DistributionStore()
    cache = PlanCache(store, tolerance_for=lambda k: 2.0, untrained_timeout=10.0)

    plan = cache.plan_for(key())

    assert plan.polls == [2.0, 4.0, 6.0, 8.0, 10.0]
    assert "untrained" in plan.flags


def test_plan_cache_refreshes_after_new_samples(door_store, rng):
    cache = PlanCache(door_store, tolerance_for=lambda k: 2.0, slo=1.0, min_poll_interval=1.0)
    first = cache.plan_for(key())
    door_store.observe_many(key(transition=Transition.START_TO_COMPLETE), rng.normal(3.19, 0.15, size=200))

    cache.refresh(key())

    assert cache.plan_for(key()) is not first
