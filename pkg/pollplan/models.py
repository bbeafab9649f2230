import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from durations.distribution import EmpiricalDistribution
from lib.errors import UnsupportableToleranceError, ValidationError

DEFAULT_EPSILON = 1e-5


class PollPlanRequest(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dist: EmpiricalDistribution
    U: Optional[float] = Field(default=None, gt=0, description="State-change bound; ppf(0.99) when omitted")
    Q_w: float = Field(gt=0, description="Detection tolerance, seconds")
    slo: float = Field(default=0.9, gt=0, le=1, description="Fraction of events to detect within Q_w")
    min_poll_interval: float = Field(default=1.0, gt=0)
    epsilon: float = Field(default=DEFAULT_EPSILON, gt=0, description="Terminal tolerance on the last poll")

    def check_supportable(self):
        """Q_w below the device rate limit can never be met."""
        if self.Q_w < self.min_poll_interval:
            raise UnsupportableToleranceError(
                f"Q_w={self.Q_w}s is below the minimum poll interval {self.min_poll_interval}s"
            )

    def bound(self) -> float:
        return self.U if self.U is not None else self.dist.upper_bound()


class PollSchedule(BaseModel):
    """Poll offsets relative to the start of the awaited transition."""

    polls: List[float]
    k: int = Field(ge=0)
    U: float
    Q_w: Optional[float] = None
    slo: Optional[float] = None
    expected_detection: Optional[float] = None
    coverage: Optional[float] = None
    valid_minimum: bool = True
    strategy: str = "adaptive"
    compute_seconds: float = 0.0
    flags: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _ordered(self):
        if self.k != len(self.polls):
            raise ValidationError("k must equal the number of polls")
        if any(b <= a for a, b in zip(self.polls, self.polls[1:])):
            raise ValidationError("polls must be strictly increasing")
        return self

    def gaps(self) -> List[float]:
        """Inter-poll gaps including the leading gap from 0."""
        previous = [0.0] + self.polls[:-1]
        return [b - a for a, b in zip(previous, self.polls)]

    def to_export(self, key: Optional[str] = None) -> dict:
        return {
            "key": key,
            "U": self.U,
            "Q_w": self.Q_w,
            "slo": self.slo,
            "k": self.k,
            "polls": list(self.polls),
            "expected_detection": None if self.expected_detection is None or math.isnan(self.expected_detection)
            else self.expected_detection,
            "coverage": self.coverage,
        }


class SecondDerivativeCheck(BaseModel):
    values: List[float]
    all_nonnegative: bool
    free_nonnegative: bool = Field(description="Every poll but the last, which is pinned at U")


class FailureDeclared(BaseModel):
    """Returned by the post-bound planner once the failure deadline passed."""

    at_offset: float = Field(description="Seconds past U at which failure was declared")
    reason: str = "no state change by U + Q_w"
