"""Empirical duration distributions learned from observed state-change times.

A distribution keeps the raw samples plus a fixed-width histogram over
[0, 1.05 * max_sample]. The histogram is the density everybody queries:
pdf/cdf/ppf, the partial mean used by the detection-time objective, and a
continuous (linearly interpolated) density for the poll optimizer.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import gaussian_filter1d
from scipy.stats import wasserstein_distance

from lib.errors import UntrainedDistributionError, ValidationError

SUPPORT_PADDING = 1.05
DEFAULT_BIN_COUNT = 64
UPPER_QUANTILE = 0.99
NEGLIGIBLE_WEIGHT = 1e-6
STABILITY_TOLERANCE = 0.05
STABILITY_RUN = 3


def _validate_duration(duration: float) -> float:
    try:
        value = float(duration)
    except (TypeError, ValueError):
        raise ValidationError(f"Duration must be a number, got {duration!r}")
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(f"Duration must be positive and finite, got {duration!r}")
    return value


def _validate_durations(samples: Sequence[float]) -> np.ndarray:
    try:
        values = np.asarray(samples, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ValidationError("Durations must be numbers")
    bad = ~np.isfinite(values) | (values <= 0)
    if np.any(bad):
        raise ValidationError(
            f"Duration must be positive and finite, got {values[np.argmax(bad)]!r}"
        )
    return values


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Immutable histogram density; `observe` returns a new version.

    `window` keeps the fit on the most recent samples so the learned law
    follows drift. With `decay`, samples older than the window still count,
    weighted decay**age where age 0 is the newest sample. `bandwidth` applies
    Gaussian smoothing (seconds) to the bin masses before normalisation.
    """

    samples: np.ndarray
    bin_edges: np.ndarray
    bin_mass: np.ndarray
    bin_count: int = DEFAULT_BIN_COUNT
    bandwidth: Optional[float] = None
    window: Optional[int] = None
    history_limit: Optional[int] = None
    decay: Optional[float] = None
    _cum_mass: np.ndarray = field(init=False, repr=False)
    _cum_moment: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cum = np.concatenate(([0.0], np.cumsum(self.bin_mass)))
        if cum[-1] > 0:
            cum = cum / cum[-1]
        object.__setattr__(self, "_cum_mass", cum)
        density = self.densities
        moments = density * (self.bin_edges[1:] ** 2 - self.bin_edges[:-1] ** 2) / 2.0
        object.__setattr__(self, "_cum_moment", np.concatenate(([0.0], np.cumsum(moments))))

    # ---- Constructors ----
    @classmethod
    def empty(
        cls,
        bin_count: int = DEFAULT_BIN_COUNT,
        bandwidth: Optional[float] = None,
        window: Optional[int] = None,
        history_limit: Optional[int] = None,
        decay: Optional[float] = None,
    ) -> "EmpiricalDistribution":
        if bin_count < 1:
            raise ValidationError("bin_count must be a positive integer")
        return cls(
            samples=np.empty(0),
            bin_edges=np.linspace(0.0, 1.0, bin_count + 1),
            bin_mass=np.zeros(bin_count),
            bin_count=bin_count,
            bandwidth=bandwidth,
            window=window,
            history_limit=history_limit,
            decay=decay,
        )

    @classmethod
    def fit(
        cls,
        samples: Sequence[float],
        bin_count: int = DEFAULT_BIN_COUNT,
        bandwidth: Optional[float] = None,
        window: Optional[int] = None,
        history_limit: Optional[int] = None,
        decay: Optional[float] = None,
    ) -> "EmpiricalDistribution":
        values = _validate_durations(samples)
        if history_limit is not None and values.size > history_limit:
            values = values[-history_limit:]
        if values.size == 0:
            return cls.empty(bin_count, bandwidth, window, history_limit, decay)
        weights = fit_weights(values.size, window, decay)
        keep = weights > NEGLIGIBLE_WEIGHT
        edges, mass = _histogram(values[keep], bin_count, bandwidth, weights[keep])
        return cls(
            samples=values,
            bin_edges=edges,
            bin_mass=mass,
            bin_count=bin_count,
            bandwidth=bandwidth,
            window=window,
            history_limit=history_limit,
            decay=decay,
        )

    @classmethod
    def from_histogram(
        cls, bin_edges: Sequence[float], bin_mass: Sequence[float]
    ) -> "EmpiricalDistribution":
        """Rebuild a distribution from exported bins (no raw samples)."""
        edges = np.asarray(bin_edges, dtype=float)
        mass = np.asarray(bin_mass, dtype=float)
        if edges.ndim != 1 or mass.ndim != 1 or edges.size != mass.size + 1:
            raise ValidationError("bin_edges must have exactly one more entry than bin_mass")
        if edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
            raise ValidationError("bin_edges must start at 0 and increase strictly")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)) or mass.sum() <= 0:
            raise ValidationError("bin_mass must be non-negative, finite and not all zero")
        widths = np.diff(edges)
        if not np.allclose(widths, widths[0]):
            raise ValidationError("bins must have equal width")
        return cls(
            samples=np.empty(0),
            bin_edges=edges,
            bin_mass=mass / mass.sum(),
            bin_count=int(mass.size),
        )

    def observe(self, duration: float) -> "EmpiricalDistribution":
        if self.is_trained and self.samples.size == 0:
            raise ValidationError("Histogram-only distributions cannot take new samples")
        value = _validate_duration(duration)
        return EmpiricalDistribution.fit(
            np.append(self.samples, value),
            bin_count=self.bin_count,
            bandwidth=self.bandwidth,
            window=self.window,
            history_limit=self.history_limit,
            decay=self.decay,
        )

    # ---- Basic properties ----
    @property
    def is_trained(self) -> bool:
        return bool(self._cum_mass[-1] > 0)

    @property
    def n(self) -> int:
        return int(self.samples.size)

    def _fitted(self) -> Tuple[np.ndarray, np.ndarray]:
        weights = fit_weights(self.samples.size, self.window, self.decay)
        keep = weights > NEGLIGIBLE_WEIGHT
        return self.samples[keep], weights[keep]

    @property
    def fitted_samples(self) -> np.ndarray:
        return self._fitted()[0]

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def support_end(self) -> float:
        return float(self.bin_edges[-1])

    @property
    def bin_centers(self) -> np.ndarray:
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2.0

    @property
    def densities(self) -> np.ndarray:
        return self.bin_mass / np.diff(self.bin_edges)

    @property
    def mean(self) -> float:
        """Sample mean of the fitted samples (histogram mean when there are none)."""
        self._require_trained()
        if self.samples.size:
            values, weights = self._fitted()
            return float(np.average(values, weights=weights))
        return self.histogram_mean

    @property
    def histogram_mean(self) -> float:
        self._require_trained()
        return float(self._cum_moment[-1])

    def _require_trained(self):
        if not self.is_trained:
            raise UntrainedDistributionError("Distribution is untrained: observe at least one sample")

    # ---- Queries ----
    def pdf(self, t):
        self._require_trained()
        t_arr = np.asarray(t, dtype=float)
        idx = np.floor(t_arr / self.bin_width).astype(int)
        idx = np.where(t_arr == self.support_end, self.bin_count - 1, idx)
        inside = (t_arr >= 0) & (t_arr <= self.support_end)
        safe = np.clip(idx, 0, self.bin_count - 1)
        values = np.where(inside, self.densities[safe], 0.0)
        return float(values) if values.ndim == 0 else values

    def cdf(self, t):
        self._require_trained()
        values = np.interp(t, self.bin_edges, self._cum_mass)
        return float(values) if np.ndim(values) == 0 else values

    def ppf(self, y: float) -> float:
        """Generalized inverse of the piecewise-linear cdf."""
        self._require_trained()
        if not 0.0 <= y <= 1.0:
            raise ValidationError(f"Quantile level must be in [0, 1], got {y}")
        cum = self._cum_mass
        if y <= 0.0:
            first = int(np.argmax(self.bin_mass > 0))
            return float(self.bin_edges[first])
        idx = int(np.searchsorted(cum[1:], y, side="left"))
        idx = min(idx, self.bin_count - 1)
        while idx > 0 and self.bin_mass[idx] <= 0:
            idx -= 1
        frac = (y - cum[idx]) / self.bin_mass[idx] if self.bin_mass[idx] > 0 else 1.0
        frac = min(max(frac, 0.0), 1.0)
        return float(self.bin_edges[idx] + frac * self.bin_width)

    def partial_mean(self, t: float) -> float:
        """Integral of s * p(s) over [0, t]."""
        self._require_trained()
        if t <= 0:
            return 0.0
        if t >= self.support_end:
            return float(self._cum_moment[-1])
        idx = min(int(t / self.bin_width), self.bin_count - 1)
        left = self.bin_edges[idx]
        return float(self._cum_moment[idx] + self.densities[idx] * (t * t - left * left) / 2.0)

    def smooth_pdf(self, t: float) -> float:
        """Density interpolated linearly between bin centers, 0 outside the support."""
        self._require_trained()
        if t < 0 or t > self.support_end:
            return 0.0
        return float(np.interp(t, self.bin_centers, self.densities))

    def smooth_pdf_slope(self, t: float) -> float:
        self._require_trained()
        centers = self.bin_centers
        if t <= centers[0] or t >= centers[-1]:
            return 0.0
        k = int(np.searchsorted(centers, t, side="right"))
        dens = self.densities
        return float((dens[k] - dens[k - 1]) / (centers[k] - centers[k - 1]))

    def upper_bound(self, quantile: float = UPPER_QUANTILE) -> float:
        return self.ppf(quantile)

    def support_weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """Atoms and weights used for earthmover comparisons."""
        self._require_trained()
        if self.samples.size:
            return self._fitted()
        keep = self.bin_mass > 0
        return self.bin_centers[keep], self.bin_mass[keep]

    def to_export(self, key: Optional[str] = None) -> dict:
        return {
            "key": key,
            "bin_edges": [float(x) for x in self.bin_edges],
            "bin_mass": [float(x) for x in self.bin_mass],
            "n": self.n,
        }


def fit_weights(size: int, window: Optional[int], decay: Optional[float]) -> np.ndarray:
    """Fit weight per sample, oldest first.

    Inside the window every sample weighs 1. Before it the weight is 0 for a
    hard window, or decay**age with age 0 at the newest sample.
    """
    weights = np.ones(size)
    if window is None or size <= window:
        return weights
    age = np.arange(size - 1, -1, -1, dtype=float)
    older = age >= window
    weights[older] = 0.0 if decay is None else np.power(decay, age[older])
    return weights


def _histogram(values: np.ndarray, bin_count: int, bandwidth: Optional[float], weights: Optional[np.ndarray] = None):
    support_end = SUPPORT_PADDING * float(values.max())
    edges = np.linspace(0.0, support_end, bin_count + 1)
    counts, _ = np.histogram(values, bins=edges, weights=weights)
    mass = counts.astype(float)
    if bandwidth:
        sigma = bandwidth / (support_end / bin_count)
        mass = gaussian_filter1d(mass, sigma=sigma, mode="constant")
    return edges, mass / mass.sum()


def observe(dist: EmpiricalDistribution, duration: float) -> EmpiricalDistribution:
    return dist.observe(duration)


def pdf(dist: EmpiricalDistribution, t: float) -> float:
    return dist.pdf(t)


def upper_bound(dist: EmpiricalDistribution) -> float:
    return dist.upper_bound()


def wasserstein(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    u_values, u_weights = a.support_weights()
    v_values, v_weights = b.support_weights()
    return float(wasserstein_distance(u_values, v_values, u_weights, v_weights))


class DriftReport(BaseModel):
    wasserstein_distance: float = Field(ge=0, description="Earthmover distance, seconds")
    stable: bool
    samples_to_stability: int = Field(ge=0)


def _relative_change(current: float, previous: float) -> float:
    if current == previous:
        return 0.0
    if previous == 0:
        return math.inf
    return abs(current - previous) / abs(previous)


def stability_trace(
    samples: Sequence[float],
    tolerance: float = STABILITY_TOLERANCE,
    run: int = STABILITY_RUN,
) -> Tuple[List[bool], Optional[int]]:
    """Per-sample stability flags and the sample count where stability began.

    The flag at n is true when the last `run` updates each moved the running
    mean and variance by less than `tolerance` (relative). The start of the
    first such run is returned as the sample count to stability.
    """
    flags: List[bool] = []
    mean = 0.0
    m2 = 0.0
    prev_mean = prev_var = None
    streak = 0
    first_stable: Optional[int] = None
    for n, x in enumerate(samples, start=1):
        delta = x - mean
        mean += delta / n
        m2 += delta * (x - mean)
        var = m2 / n
        ok = False
        if prev_mean is not None:
            ok = (
                _relative_change(mean, prev_mean) < tolerance
                and _relative_change(var, prev_var) < tolerance
            )
        streak = streak + 1 if ok else 0
        flags.append(streak >= run)
        if streak == run and first_stable is None:
            first_stable = n - run + 1
        prev_mean, prev_var = mean, var
    return flags, first_stable


def drift_check(dist: EmpiricalDistribution, window: int) -> DriftReport:
    """Compare the most recent `window` samples against the history before them."""
    dist._require_trained()
    if window < 1:
        raise ValidationError("window must be at least 1")
    if dist.n < window + 1:
        raise ValidationError(
            f"drift_check needs at least {window + 1} samples, distribution has {dist.n}"
        )
    recent = dist.samples[-window:]
    previous = dist.samples[:-window]
    distance = float(wasserstein_distance(previous, recent))
    flags, first_stable = stability_trace(dist.samples)
    return DriftReport(
        wasserstein_distance=distance,
        stable=flags[-1],
        samples_to_stability=first_stable if first_stable is not None else dist.n,
    )
