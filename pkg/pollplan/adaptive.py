"""Adaptive poll placement.

The expected detection time of a poll sequence L_1 < ... < L_k is

    Q = sum_i L_i * (F(L_i) - F(L_{i-1})) - integral_0^{L_k} t p(t) dt,   L_0 = 0.

Its first-order conditions give a recurrence that fixes every poll once L_1
is chosen; L_1 is bisected until the last poll lands on U. The number of
polls is then the smallest budget whose placement meets the SLO.
"""

import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

from durations.distribution import EmpiricalDistribution
from lib import console
from lib.errors import InfeasibleBudgetError, ValidationError
from pollplan.models import (
    DEFAULT_EPSILON,
    PollPlanRequest,
    PollSchedule,
    SecondDerivativeCheck,
)

MAX_L1_STEPS = 200
MAX_BUDGET_DOUBLINGS = 64
DENSITY_FLOOR = 1e-9


def _check_ordered(polls: Sequence[float]):
    if any(b <= a for a, b in zip(polls, polls[1:])):
        raise ValidationError("polls must be strictly increasing")
    if polls and polls[0] <= 0:
        raise ValidationError("polls must be positive offsets")


def expected_detection(dist: EmpiricalDistribution, polls: Sequence[float]) -> float:
    """Expected gap between the state change and the poll that observes it."""
    _check_ordered(polls)
    if not polls:
        return 0.0
    total = 0.0
    previous_cdf = 0.0
    for poll in polls:
        current_cdf = dist.cdf(poll)
        total += poll * (current_cdf - previous_cdf)
        previous_cdf = current_cdf
    return total - dist.partial_mean(polls[-1])


def _generate(
    dist: EmpiricalDistribution, first: float, k: int, U: float, epsilon: float, floor: float
) -> Tuple[List[float], bool, bool]:
    """Polls implied by L_1 = first. Returns (polls, overshoot, hit_floor)."""
    polls = [first]
    before, current = 0.0, first
    hit_floor = False
    for _ in range(k - 1):
        density = dist.smooth_pdf(current)
        if density < floor:
            density = floor
            hit_floor = True
        nxt = current + (dist.cdf(current) - dist.cdf(before)) / density
        polls.append(nxt)
        if nxt > U + epsilon:
            return polls, True, hit_floor
        before, current = current, nxt
    return polls, False, hit_floor


def second_derivative_check(dist: EmpiricalDistribution, polls: Sequence[float]) -> SecondDerivativeCheck:
    """Curvature of Q along each poll; negative entries mean a saddle, not a minimum.

    The last poll is pinned at U, so only the free polls decide whether the
    placement is a minimum.
    """
    values = []
    k = len(polls)
    for i, poll in enumerate(polls):
        p = dist.smooth_pdf(poll)
        slope = dist.smooth_pdf_slope(poll)
        if i < k - 1:
            values.append(2.0 * p - (polls[i + 1] - poll) * slope)
        else:
            values.append(2.0 * p + poll * slope)
    return SecondDerivativeCheck(
        values=values,
        all_nonnegative=all(v >= -1e-12 for v in values),
        free_nonnegative=all(v >= -1e-12 for v in values[:-1]),
    )


def solve_recurrence(
    dist: EmpiricalDistribution, k: int, U: float, epsilon: float = DEFAULT_EPSILON
) -> PollSchedule:
    """Minimum-Q placement of exactly k polls ending at U."""
    started = time.perf_counter()
    if k < 1:
        raise ValidationError("k must be at least 1")
    if not U > 0:
        raise ValidationError("U must be positive")
    dist._require_trained()
    floor = DENSITY_FLOOR / U
    flags: List[str] = []

    if k == 1:
        polls = [float(U)]
    else:
        low, high = 0.0, float(U)
        found: Optional[List[float]] = None
        for _ in range(MAX_L1_STEPS):
            first = (low + high) / 2.0
            polls, overshoot, hit_floor = _generate(dist, first, k, U, epsilon, floor)
            if not overshoot and abs(polls[-1] - U) <= epsilon:
                found = polls
                if hit_floor:
                    flags.append("density_floor")
                break
            if overshoot or polls[-1] > U:
                high = first
            else:
                low = first
        if found is None:
            raise InfeasibleBudgetError(
                f"No first poll places poll {k} within {epsilon}s of U={U:.6g}s"
            )
        found[-1] = float(U)
        if any(b <= a for a, b in zip(found, found[1:])):
            raise InfeasibleBudgetError(f"Recurrence collapsed for k={k}: polls are not increasing")
        polls = found

    check = second_derivative_check(dist, polls)
    return PollSchedule(
        polls=polls,
        k=len(polls),
        U=float(U),
        expected_detection=expected_detection(dist, polls),
        valid_minimum=check.free_nonnegative,
        strategy="adaptive",
        compute_seconds=time.perf_counter() - started,
        flags=flags,
    )


def coverage(
    dist: EmpiricalDistribution, polls: Sequence[float], Q_w: float, U: Optional[float] = None
) -> float:
    """Probability mass on (0, U] whose next poll comes within Q_w.

    Unconditional: mass past U counts as undetected, so the result never
    exceeds cdf(U).
    """
    if not polls:
        return 0.0
    _check_ordered(polls)
    bound = polls[-1] if U is None else U
    covered = 0.0
    reach = 0.0
    for poll in polls:
        start = max(poll - Q_w, reach, 0.0)
        end = min(poll, bound)
        if end > start:
            covered += dist.cdf(end) - dist.cdf(start)
            reach = end
    return min(1.0, covered)


def _enforce_min_interval(schedule: PollSchedule, min_gap: float) -> PollSchedule:
    """Drop polls closer than `min_gap` to the previous one; the poll at U stays."""
    polls = schedule.polls
    kept: List[float] = []
    for poll in polls[:-1]:
        if not kept or poll - kept[-1] >= min_gap:
            kept.append(poll)
    while kept and polls[-1] - kept[-1] < min_gap:
        kept.pop()
    kept.append(polls[-1])
    if len(kept) == len(polls):
        return schedule
    return schedule.model_copy(
        update={"polls": kept, "k": len(kept), "flags": schedule.flags + ["min_interval_thinned"]}
    )


class _BudgetOracle:
    """Evaluates budgets k for one request, memoized."""

    def __init__(self, req: PollPlanRequest, U: float):
        self.req = req
        self.U = U
        self._seen: Dict[int, Tuple[Optional[PollSchedule], bool]] = {}

    def passes(self, schedule: PollSchedule) -> bool:
        req = self.req
        if req.slo >= 1.0:
            return schedule.polls[-1] >= self.U - req.epsilon and all(
                gap <= req.Q_w + req.epsilon for gap in schedule.gaps()
            )
        return coverage(req.dist, schedule.polls, req.Q_w, self.U) >= req.slo - 1e-12

    def __call__(self, k: int) -> bool:
        if k not in self._seen:
            self._seen[k] = self._evaluate(k)
        return self._seen[k][1]

    def schedule(self, k: int) -> PollSchedule:
        self(k)
        return self._seen[k][0]

    def _evaluate(self, k: int) -> Tuple[Optional[PollSchedule], bool]:
        req = self.req
        try:
            candidate = solve_recurrence(req.dist, k, self.U, req.epsilon)
        except InfeasibleBudgetError as e:
            console.info("pollplan", f"k={k}: {e}")
            return None, False
        if not candidate.valid_minimum:
            console.info("pollplan", f"k={k}: placement is not a minimum, trying more polls")
            return candidate, False
        thinned = _enforce_min_interval(candidate, req.min_poll_interval)
        return thinned, self.passes(thinned)


def find_polls(req: PollPlanRequest) -> PollSchedule:
    """Smallest poll budget whose placement meets the SLO within Q_w."""
    started = time.perf_counter()
    req.check_supportable()
    req.dist._require_trained()
    U = req.bound()
    if req.slo < 1.0 and req.dist.cdf(U) < req.slo - 1e-12:
        raise InfeasibleBudgetError(
            f"slo={req.slo} exceeds the mass below U={U:.6g}s ({req.dist.cdf(U):.4f}); no poll budget can meet it"
        )
    oracle = _BudgetOracle(req, U)
    max_budget = int(math.ceil(U / req.min_poll_interval)) + 1

    low, high = 1, max(1, int(math.ceil(U / req.Q_w - 1e-9)))
    doublings = 0
    while not oracle(high):
        low = high + 1
        high *= 2
        doublings += 1
        if doublings > MAX_BUDGET_DOUBLINGS or high > 2 * max_budget:
            raise InfeasibleBudgetError(
                f"No poll budget meets slo={req.slo} with Q_w={req.Q_w}s under U={U:.6g}s"
            )
    while low < high:
        mid = (low + high) // 2
        if oracle(mid):
            high = mid
        else:
            low = mid + 1
    # candidates are not guaranteed monotone in k, so confirm nothing smaller passes
    for k in range(1, high):
        if oracle(k):
            high = k
            break

    chosen = oracle.schedule(high)
    result = chosen.model_copy(
        update={
            "Q_w": req.Q_w,
            "slo": req.slo,
            "expected_detection": expected_detection(req.dist, chosen.polls),
            "coverage": coverage(req.dist, chosen.polls, req.Q_w, U),
            "compute_seconds": time.perf_counter() - started,
        }
    )
    console.info("pollplan", f"k*={result.k} U={U:.3f}s Q={result.expected_detection:.3f}s")
    return result
