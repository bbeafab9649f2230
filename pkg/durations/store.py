import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from durations.distribution import DEFAULT_BIN_COUNT, EmpiricalDistribution
from durations.keys import Transition, TransitionKey
from lib.errors import ValidationError

TRACE_COLUMNS = ["device", "action", "transition", "duration_s"]


class TraceFormatError(ValidationError):
    """Raised with every malformed row of a trace file."""

    def __init__(self, problems: List[Tuple[int, str]]):
        self.problems = problems
        detail = "; ".join(f"line {line}: {msg}" for line, msg in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"Malformed trace rows: {detail}{more}")


class DistributionStore:
    """Distributions indexed by (device, action, transition).

    A single writer per key is the contract; readers get immutable versions.
    """

    def __init__(
        self,
        bin_count: int = DEFAULT_BIN_COUNT,
        window: Optional[int] = None,
        bandwidth: Optional[float] = None,
        min_training_samples: int = 1,
        decay: Optional[float] = None,
    ):
        self.bin_count = bin_count
        self.window = window
        self.decay = decay
        self.bandwidth = bandwidth
        self.min_training_samples = min_training_samples
        # keep a few windows of raw history so drift checks have a baseline
        self.history_limit = None if window is None else window * 5
        self._dists: Dict[TransitionKey, EmpiricalDistribution] = {}

    def _empty(self) -> EmpiricalDistribution:
        return EmpiricalDistribution.empty(
            self.bin_count, self.bandwidth, self.window, self.history_limit, self.decay
        )

    def observe(self, key: TransitionKey, duration: float) -> EmpiricalDistribution:
        current = self._dists.get(key) or self._empty()
        updated = current.observe(duration)
        self._dists[key] = updated
        return updated

    def observe_many(self, key: TransitionKey, durations: Iterable[float]) -> EmpiricalDistribution:
        current = self._dists.get(key)
        history = list(current.samples) if current is not None else []
        updated = EmpiricalDistribution.fit(
            history + list(durations),
            bin_count=self.bin_count,
            bandwidth=self.bandwidth,
            window=self.window,
            history_limit=self.history_limit,
            decay=self.decay,
        )
        self._dists[key] = updated
        return updated

    def put(self, key: TransitionKey, dist: EmpiricalDistribution):
        self._dists[key] = dist

    def get(self, key: TransitionKey) -> Optional[EmpiricalDistribution]:
        return self._dists.get(key)

    def is_trained(self, key: TransitionKey) -> bool:
        dist = self._dists.get(key)
        if dist is None or not dist.is_trained:
            return False
        # histogram-only imports count as trained
        return dist.n == 0 or dist.n >= self.min_training_samples

    def keys(self) -> List[TransitionKey]:
        return sorted(self._dists, key=str)

    def __len__(self) -> int:
        return len(self._dists)

    def __contains__(self, key: TransitionKey) -> bool:
        return key in self._dists

    # ---- Trace ingestion ----
    def load_traces(self, path) -> Dict[TransitionKey, int]:
        """Read a trace CSV, all-or-nothing. Returns samples added per key."""
        rows = read_trace_csv(path)
        grouped: Dict[TransitionKey, List[float]] = {}
        for key, duration in rows:
            grouped.setdefault(key, []).append(duration)
        for key, durations in grouped.items():
            self.observe_many(key, durations)
        return {key: len(v) for key, v in grouped.items()}

    # ---- Export ----
    def export_json(self) -> List[dict]:
        return [self._dists[key].to_export(str(key)) for key in self.keys()]

    def save(self, path):
        Path(path).write_text(json.dumps(self.export_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def import_json(cls, documents: List[dict], min_training_samples: int = 1) -> "DistributionStore":
        store = cls(min_training_samples=min_training_samples)
        for doc in documents:
            try:
                key = TransitionKey.parse(doc["key"])
                dist = EmpiricalDistribution.from_histogram(doc["bin_edges"], doc["bin_mass"])
            except KeyError as e:
                raise ValidationError(f"Distribution entry missing field {e}")
            store.put(key, dist)
        return store

    @classmethod
    def load(cls, path, min_training_samples: int = 1) -> "DistributionStore":
        try:
            documents = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path} is not valid JSON: {e}")
        if not isinstance(documents, list):
            raise ValidationError(f"{path} must hold a list of distributions")
        return cls.import_json(documents, min_training_samples)


def read_trace_csv(path) -> List[Tuple[TransitionKey, float]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Trace file not found: {path}")
    problems: List[Tuple[int, str]] = []
    rows: List[Tuple[TransitionKey, float]] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"Trace file is empty: {path}")
        if [h.strip() for h in header] != TRACE_COLUMNS:
            raise TraceFormatError([(1, f"expected header {','.join(TRACE_COLUMNS)}")])
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(TRACE_COLUMNS):
                problems.append((line_no, f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}"))
                continue
            device, action, transition, raw = (cell.strip() for cell in row)
            try:
                key = TransitionKey(
                    device_id=device, action_kind=action, transition=Transition(transition)
                )
            except ValueError as e:
                problems.append((line_no, f"bad key: {str(e).splitlines()[0]}"))
                continue
            try:
                duration = float(raw)
            except ValueError:
                problems.append((line_no, f"duration {raw!r} is not a number"))
                continue
            if not duration > 0 or duration == float("inf"):
                problems.append((line_no, f"duration {raw!r} must be positive and finite"))
                continue
            rows.append((key, duration))
    if problems:
        raise TraceFormatError(problems)
    if not rows:
        raise ValidationError(f"Trace file has no observations: {path}")
    return rows
