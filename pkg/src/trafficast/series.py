"""Sub-series slicing, periodic splitting, day-to-day similarity and ACF."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ingest import SpeedSeries


class DegenerateSimilarityWarning(UserWarning):
    pass


class NoIntervalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DayGrid:
    """A segment's series cut into complete periods, one per row.

    ``day_index`` holds the position of each kept row among all periods of the
    source series (rows with missing values are skipped).
    """

    segment_id: str
    period: int
    rows: np.ndarray
    day_index: np.ndarray
    day_start: np.ndarray

    @property
    def n_days(self) -> int:
        return self.rows.shape[0]

    def flatten(self) -> np.ndarray:
        return self.rows.reshape(-1)


@dataclass(frozen=True)
class AcfProfile:
    coefficients: np.ndarray  # lag 1 .. max_lag
    confidence_band: float
    n: int

    @property
    def max_lag(self) -> int:
        return len(self.coefficients)


class Similarity(NamedTuple):
    values: np.ndarray
    degenerate: bool


def subseries(x, start: int, length: int, stride: int = 1) -> np.ndarray:
    """[x_t, x_{t+l}, ..., x_{t+(L-1)l}] with a 1-based start index t."""
    x = np.asarray(x)
    if stride < 1 or length < 1:
        raise IndexError("length and stride must be >= 1")
    last = start + (length - 1) * stride
    if start < 1 or last > len(x):
        raise IndexError(f"window {start}..{last} outside 1..{len(x)}")
    return x[start - 1:last:stride]


def split_periodic(s: SpeedSeries, period: int = 288) -> DayGrid:
    if period < 1:
        raise ValueError("period must be >= 1")
    if len(s) % period:
        raise ValueError(f"length {len(s)} is not divisible by period {period}")
    blocks = s.values.reshape(-1, period)
    ok = ~np.isnan(blocks).any(axis=1)
    if not ok.any():
        raise ValueError(f"segment {s.segment_id}: no complete period")
    idx = np.nonzero(ok)[0]
    starts = s.times[idx * period]
    return DayGrid(s.segment_id, period, blocks[idx].copy(), idx, starts)


def traffic_similarity(x, period: int = 288) -> Similarity:
    """|x_t - x_{t+N_p}| normalised by the largest such gap over the series.

    A perfectly periodic series has a zero denominator; the result is then all
    zeros with ``degenerate`` set. Gaps touching a missing value are NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) <= period:
        raise ValueError("series must be longer than one period")
    gaps = np.abs(x[:-period] - x[period:])
    top = np.nanmax(gaps) if np.isfinite(gaps).any() else 0.0
    if not top > 0:
        warnings.warn("zero day-to-day gap everywhere; similarity set to zero",
                      DegenerateSimilarityWarning, stacklevel=2)
        return Similarity(np.where(np.isnan(gaps), np.nan, 0.0), True)
    return Similarity(gaps / top, False)


def similarity_cdf(sims, n_points: int = 101) -> np.ndarray:
    """Empirical CDF on an even threshold grid over [0, 1]; rows are (threshold, fraction)."""
    v = np.asarray(sims, dtype=np.float64).ravel()
    v = np.sort(v[~np.isnan(v)])
    if v.size == 0:
        raise ValueError("empty similarity sample")
    thresholds = np.linspace(0.0, 1.0, n_points)
    fractions = np.searchsorted(v, thresholds, side="right") / v.size
    return np.column_stack([thresholds, fractions])


def acf(x, max_lag: int = 20) -> AcfProfile:
    """Biased sample autocorrelation around the global mean, lags 1..max_lag."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("acf needs a series without missing values")
    n = len(x)
    if max_lag < 1 or n <= max_lag:
        raise ValueError("need 1 <= max_lag < len(x)")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0:
        raise ValueError("autocorrelation undefined for a constant series")
    coef = np.array([d[:-k] @ d[k:] for k in range(1, max_lag + 1)]) / denom
    return AcfProfile(coef, 1.96 / math.sqrt(n), n)


def mean_acf(profiles: list[AcfProfile]) -> AcfProfile:
    """Average several profiles lag by lag (used to pick one network-wide stride)."""
    if not profiles:
        raise ValueError("no profiles")
    lags = {p.max_lag for p in profiles}
    if len(lags) != 1:
        raise ValueError("profiles have different max_lag")
    coef = np.mean([p.coefficients for p in profiles], axis=0)
    n = sum(p.n for p in profiles)
    return AcfProfile(coef, 1.96 / math.sqrt(n), n)


def select_interval(profile: AcfProfile, threshold: float = 0.8) -> int:
    """Largest lag whose coefficient exceeds ``threshold``; 1 if none does."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    above = np.nonzero(profile.coefficients > threshold)[0]
    if above.size == 0:
        warnings.warn(f"no lag exceeds {threshold}; using stride 1", NoIntervalWarning,
                      stacklevel=2)
        return 1
    return int(above[-1]) + 1


def input_length(period: int, stride: int) -> int:
    if period < 1 or stride < 1:
        raise ValueError("period and stride must be >= 1")
    return -(-period // stride)
