import sys
import threading
from concurrent.futures import Future, ThreadPoolExecutor, TimeoutError as FutureTimeoutError
from typing import Callable, Dict, Optional

from colorama import Fore, Style

from durations.keys import TransitionKey
from durations.store import DistributionStore
from lib import console
from lib.errors import InfeasibleBudgetError
from pollplan.adaptive import find_polls
from pollplan.baselines import periodic_plan
from pollplan.models import PollPlanRequest, PollSchedule


class PlanCache:
    """Poll plans per transition, recomputed off the critical path.

    A plan is refreshed after an action of that key completes and served on
    the key's next initiation. Without an executor refreshes run inline,
    which keeps simulations deterministic.
    """

    def __init__(
        self,
        store: DistributionStore,
        tolerance_for: Callable[[TransitionKey], float],
        slo: float = 0.9,
        min_poll_interval: float = 1.0,
        untrained_timeout: float = 600.0,
        strategy: str = "adaptive",
        executor: Optional[ThreadPoolExecutor] = None,
        timeout: float = 60.0,
    ):
        if strategy not in ("adaptive", "periodic"):
            raise ValueError(f"Unsupported plan strategy: {strategy}. Supported: 'adaptive', 'periodic'")
        self.store = store
        self.tolerance_for = tolerance_for
        self.slo = slo
        self.min_poll_interval = min_poll_interval
        self.untrained_timeout = untrained_timeout
        self.strategy = strategy
        self.executor = executor
        self.timeout = timeout
        self._plans: Dict[TransitionKey, PollSchedule] = {}
        self._pending: Dict[TransitionKey, Future] = {}
        self._lock = threading.Lock()

    def compute(self, key: TransitionKey) -> PollSchedule:
        Q_w = self.tolerance_for(key)
        if not self.store.is_trained(key):
            plan = periodic_plan(self.untrained_timeout, Q_w)
            return plan.model_copy(update={"flags": ["untrained"]})
        dist = self.store.get(key)
        if self.strategy == "periodic":
            return periodic_plan(dist.upper_bound(), Q_w)
        try:
            return find_polls(
                PollPlanRequest(
                    dist=dist,
                    Q_w=Q_w,
                    slo=self.slo,
                    min_poll_interval=min(self.min_poll_interval, Q_w),
                )
            )
        except InfeasibleBudgetError as e:
            console.warn("plan", f"{key}: {e}; polling every Q_w instead")
            plan = periodic_plan(dist.upper_bound(), Q_w)
            return plan.model_copy(update={"flags": ["infeasible_fallback"]})

    def _store_result(self, key: TransitionKey, plan: PollSchedule):
        with self._lock:
            self._plans[key] = plan

    def refresh(self, key: TransitionKey):
        """Recompute the plan for `key`; failures keep the previous plan."""
        if self.executor is None:
            try:
                self._store_result(key, self.compute(key))
            except Exception as e:
                self._report_failure(key, e)
            return
        with self._lock:
            if key in self._pending and not self._pending[key].done():
                return
            self._pending[key] = self.executor.submit(self.compute, key)

    def _report_failure(self, key: TransitionKey, e: Exception):
        error_msg = f"Plan refresh for {key} failed: {type(e).__name__}: {str(e)}"
        print(f"{Fore.RED}Error: {error_msg}{Style.RESET_ALL}", file=sys.stderr)

    def collect(self):
        """Fold finished background refreshes into the cache."""
        with self._lock:
            pending = list(self._pending.items())
        for key, future in pending:
            if not future.done():
                continue
            try:
                self._store_result(key, future.result(timeout=self.timeout))
            except FutureTimeoutError:
                console.warn("plan", f"refresh for {key} timed out after {self.timeout} seconds")
            except Exception as e:
                self._report_failure(key, e)
            with self._lock:
                self._pending.pop(key, None)

    def wait(self):
        with self._lock:
            pending = list(self._pending.values())
        for future in pending:
            try:
                future.result(timeout=self.timeout)
            except Exception:
                pass
        self.collect()

    def plan_for(self, key: TransitionKey) -> PollSchedule:
        self.collect()
        with self._lock:
            plan = self._plans.get(key)
        if plan is None:
            plan = self.compute(key)
            self._store_result(key, plan)
        return plan

    def invalidate(self, key: TransitionKey):
        with self._lock:
            self._plans.pop(key, None)
