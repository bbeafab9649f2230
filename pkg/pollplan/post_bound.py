"""Polling after the planned horizon U ran out without the awaited change."""

from typing import Optional, Union

from pollplan.models import FailureDeclared

BACKOFF_MULTIPLIER = 2.0


def progress_estimate(progress: float, elapsed: float) -> float:
    """Remaining time extrapolated from the observed completion rate."""
    return elapsed * (1.0 - progress) / progress


def post_u_plan(
    last_gap: Optional[float],
    Q_w: float,
    progress: Optional[float] = None,
    elapsed: float = 0.0,
    since_u: float = 0.0,
    base_gap: float = 1.0,
    deadline: Optional[float] = None,
) -> Union[float, FailureDeclared]:
    """Offset of the next poll, or FailureDeclared.

    Args:
        last_gap: previous post-U gap, None for the first poll past U.
        Q_w: detection tolerance; no gap exceeds it.
        progress: fresh progress evidence in (0, 1), if the device reports one.
        elapsed: seconds since the action began, used for rate extrapolation.
        since_u: seconds already spent past U.
        base_gap: first backoff gap, normally the min poll interval.
        deadline: seconds past U at which to give up; Q_w unless extended.

    Returns:
        Seconds until the next poll, or FailureDeclared once the deadline passed.
    """
    if progress is not None and 0.0 < progress < 1.0:
        return min(progress_estimate(progress, elapsed), Q_w)

    limit = Q_w if deadline is None else deadline
    remaining = limit - since_u
    if remaining <= 1e-9:
        return FailureDeclared(at_offset=since_u)
    gap = base_gap if last_gap is None else min(last_gap * BACKOFF_MULTIPLIER, Q_w)
    return min(gap, remaining)


class PostBoundBackoff:
    """Stateful driver over post_u_plan for one action past U."""

    def __init__(self, Q_w: float, base_gap: float = 1.0):
        self.Q_w = Q_w
        self.base_gap = min(base_gap, Q_w)
        self.deadline = Q_w
        self.since_u = 0.0
        self._last_gap: Optional[float] = None

    def extend(self, estimate: float):
        """Push the failure deadline out by a progress-based estimate."""
        self.deadline = max(self.deadline, self.since_u + estimate)

    def next(self, progress: Optional[float] = None, elapsed: float = 0.0) -> Union[float, FailureDeclared]:
        offset = post_u_plan(
            self._last_gap,
            self.Q_w,
            progress=progress,
            elapsed=elapsed,
            since_u=self.since_u,
            base_gap=self.base_gap,
            deadline=self.deadline,
        )
        if isinstance(offset, FailureDeclared):
            return offset
        if progress is None:
            self._last_gap = offset
        else:
            # fresh evidence restarts the backoff
            self._last_gap = None
        self.since_u += offset
        return offset
