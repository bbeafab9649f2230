import math
import time
from typing import List, Tuple

import numpy as np

from durations.distribution import EmpiricalDistribution
from lib.errors import ValidationError
from pollplan.adaptive import expected_detection
from pollplan.models import PollSchedule


def periodic_plan(U: float, Q_w: float) -> PollSchedule:
    """Poll every Q_w until the first multiple at or past U."""
    if not U > 0 or not Q_w > 0:
        raise ValidationError("U and Q_w must be positive")
    count = max(1, int(math.ceil(U / Q_w - 1e-9)))
    return PollSchedule(
        polls=[Q_w * (i + 1) for i in range(count)],
        k=count,
        U=U,
        Q_w=Q_w,
        coverage=1.0,
        strategy="periodic",
    )


def _partition(data: List[float], buckets: int) -> Tuple[float, List[Tuple[int, int]]]:
    """Split `data` into contiguous buckets minimising within-bucket squared
    error plus squared bucket mass. Ties keep the leftmost split."""
    n = len(data)
    p, pp = [0.0] * (n + 1), [0.0] * (n + 1)
    for i in range(1, n + 1):
        p[i] = p[i - 1] + data[i - 1]
        pp[i] = pp[i - 1] + data[i - 1] * data[i - 1]

    def cost(a, b):
        # bins a..b inclusive, 1-based
        s1 = p[b] - p[a - 1]
        s2 = pp[b] - pp[a - 1]
        return max(s2 - s1 * s1 / (b - a + 1), 0.0) + s1 * s1

    best = np.full((buckets + 1, n + 1), np.inf)
    split = np.zeros((buckets + 1, n + 1), dtype=int)
    for i in range(1, n + 1):
        best[1][i] = cost(1, i)
    for k in range(2, buckets + 1):
        for i in range(k, n + 1):
            for j in range(k - 1, i):
                candidate = best[k - 1][j] + cost(j + 1, i)
                if candidate < best[k][i] - 1e-15:
                    best[k][i] = candidate
                    split[k][i] = j

    cuts: List[Tuple[int, int]] = []
    end = n
    for k in range(buckets, 1, -1):
        j = int(split[k][end])
        cuts.append((j, end - 1))
        end = j
    cuts.append((0, end - 1))
    cuts.reverse()
    return float(best[buckets][n]), cuts


def vopt_plan(dist: EmpiricalDistribution, k: int, U: float) -> PollSchedule:
    """Histogram-partition baseline: one poll at each bucket's right edge, last at U."""
    started = time.perf_counter()
    dist._require_trained()
    if k < 1:
        raise ValidationError("k must be at least 1")
    if k > dist.bin_count:
        raise ValidationError(f"k={k} exceeds the histogram's {dist.bin_count} bins")
    last_bin = min(int(U / dist.bin_width), dist.bin_count - 1)
    data = [float(m) for m in dist.bin_mass[: last_bin + 1]]
    buckets = min(k, len(data))
    _, cuts = _partition(data, buckets)

    polls: List[float] = []
    for _, right in cuts[:-1]:
        edge = float(dist.bin_edges[right + 1])
        if edge < U and (not polls or edge > polls[-1]):
            polls.append(edge)
    polls.append(float(U))
    return PollSchedule(
        polls=polls,
        k=len(polls),
        U=float(U),
        expected_detection=expected_detection(dist, polls),
        strategy="vopt",
        compute_seconds=time.perf_counter() - started,
    )
