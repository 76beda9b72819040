"""Labelled synthetic road networks built from daily speed archetypes."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .ingest import DEFAULT_UTC_OFFSET_HOURS, SpeedSeries


@dataclass(frozen=True)
class Archetype:
    """A daily speed profile plus the dials of its day-to-day variability.

    ``control`` holds (hour, km/h) knots over [0, 24]; the first and last knot
    must agree so consecutive days join smoothly. Day jitter combines a random
    timing shift (``shift_minutes``), a smooth additive field (``sigma_day``)
    and short traffic waves (white noise box-averaged over ``wave_minutes``,
    standard deviation ``sigma_wave``); ``sigma_obs`` is white measurement
    noise. Incidents are rare speed drops of ``incident_depth`` km/h lasting
    ``incident_minutes``, occurring ``incident_rate`` times per day on average.
    """

    name: str
    control: tuple[tuple[float, float], ...]
    sigma_day: float = 1.5
    sigma_obs: float = 1.5
    shift_minutes: float = 8.0
    sigma_wave: float = 4.5
    wave_minutes: float = 30.0
    incident_rate: float = 0.2
    incident_depth: float = 55.0
    incident_minutes: float = 45.0

    def __post_init__(self):
        hours = [h for h, _ in self.control]
        speeds = [v for _, v in self.control]
        if hours[0] != 0 or hours[-1] != 24 or speeds[0] != speeds[-1]:
            raise ValueError(f"{self.name}: control knots must span 0..24 h and wrap")
        if any(b <= a for a, b in zip(hours, hours[1:])):
            raise ValueError(f"{self.name}: control hours must increase")
        if min(speeds) < 5 or max(speeds) > 120:
            raise ValueError(f"{self.name}: profile must stay within [5, 120] km/h")
        if min(self.sigma_day, self.sigma_obs, self.shift_minutes, self.sigma_wave,
               self.incident_rate, self.incident_depth, self.incident_minutes) < 0:
            raise ValueError(f"{self.name}: noise scales must be >= 0")
        if self.wave_minutes <= 0:
            raise ValueError(f"{self.name}: wave_minutes must be > 0")

    def _interp(self):
        h, v = zip(*self.control)
        return PchipInterpolator(h, v)

    def profile(self, period: int = 288, shift_hours: float = 0.0) -> np.ndarray:
        hours = (np.arange(period) * 24.0 / period - shift_hours) % 24.0
        return self._interp()(hours)

    def quiet(self) -> "Archetype":
        return replace(self, sigma_day=0.0, sigma_obs=0.0, shift_minutes=0.0, sigma_wave=0.0,
                       incident_rate=0.0)


def default_archetypes() -> list[Archetype]:
    """Evening breakdown, morning breakdown with mid-speed swings, mid-speed plateau."""
    evening = Archetype("evening_breakdown", (
        (0, 62), (5, 64), (7, 55), (9, 50), (12, 52), (16, 48), (17, 38), (18, 20),
        (19, 22), (20, 40), (21.5, 55), (24, 62)))
    morning = Archetype("morning_breakdown", (
        (0, 60), (5, 62), (6.5, 45), (7.5, 22), (8.5, 20), (9.5, 32), (11, 40), (12.5, 34),
        (14, 41), (15.5, 35), (17, 40), (18.5, 33), (20, 42), (22, 55), (24, 60)))
    plateau = Archetype("mid_plateau", (
        (0, 38), (1.5, 52), (3, 58), (4.5, 57), (5.5, 45), (6, 38), (7, 35), (9, 34.5),
        (12, 35.5), (15, 35), (17.5, 33), (18.5, 31.5), (19.5, 33.5), (21, 36), (22.5, 37),
        (24, 38)))
    return [evening, morning, plateau]


@dataclass(frozen=True)
class SynthSpec:
    archetypes: tuple[Archetype, ...] = field(default_factory=lambda: tuple(default_archetypes()))
    segments_per_archetype: int = 9
    days: int = 60
    period: int = 288
    seed: int = 0
    amplitude_range: tuple[float, float] = (0.85, 1.15)
    offset_range: tuple[float, float] = (-5.0, 5.0)
    segment_shift_minutes: float = 15.0
    start: dt.date = dt.date(2017, 9, 4)
    utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS

    def __post_init__(self):
        if len(self.archetypes) < 1:
            raise ValueError("need at least one archetype")
        if self.segments_per_archetype < 1:
            raise ValueError("segments_per_archetype must be >= 1")
        if self.days < 2:
            raise ValueError("days must be >= 2")
        if self.period < 2:
            raise ValueError("period must be >= 2")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise ValueError("amplitude_range must be positive and ordered")
        if self.offset_range[0] > self.offset_range[1]:
            raise ValueError("offset_range must be ordered")

    @property
    def step(self) -> int:
        return 86400 // self.period

    @property
    def t0(self) -> int:
        tz = dt.timezone(dt.timedelta(hours=self.utc_offset_hours))
        return int(dt.datetime.combine(self.start, dt.time(), tz).timestamp())


def _smooth_field(rng, n_days: int, period: int, sigma: float, knots_per_day: int = 8):
    """Low-frequency additive field: random knots spline-interpolated across the whole span."""
    if sigma == 0:
        return np.zeros(n_days * period)
    n_knots = n_days * knots_per_day + 1
    knots = rng.normal(0.0, sigma, n_knots)
    x = np.linspace(0.0, n_days * period, n_knots)
    return PchipInterpolator(x, knots)(np.arange(n_days * period))


def _waves(rng, n: int, sigma: float, width: int) -> np.ndarray:
    """Moving average of white noise; autocorrelation falls linearly to zero at ``width``."""
    if sigma == 0:
        return np.zeros(n)
    white = rng.normal(0.0, sigma, n + width - 1)
    return np.convolve(white, np.full(width, 1.0 / np.sqrt(width)), mode="valid")


def _incidents(rng, n: int, period: int, rate: float, depth: float, minutes: float):
    """Sum of raised-cosine dips at Poisson-distributed start times."""
    out = np.zeros(n)
    count = rng.poisson(rate * n / period) if rate > 0 else 0
    width = max(2, int(round(minutes / (1440.0 / period))))
    shape = np.sin(np.linspace(0.0, np.pi, width)) ** 2
    for start in np.sort(rng.integers(0, n, count)):
        severity = depth * rng.uniform(0.5, 1.0)
        end = min(n, start + width)
        out[start:end] -= severity * shape[:end - start]
    return out


def generate_segment(arch: Archetype, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    period, days = spec.period, spec.days
    amp = rng.uniform(*spec.amplitude_range)
    offset = rng.uniform(*spec.offset_range)
    seg_shift = rng.uniform(-1.0, 1.0) * spec.segment_shift_minutes / 60.0
    day_shifts = rng.normal(0.0, arch.shift_minutes / 60.0, days)
    base = np.concatenate([arch.profile(period, seg_shift + s) for s in day_shifts])
    speed = amp * base + offset
    speed += _smooth_field(rng, days, period, arch.sigma_day)
    width = max(1, int(round(arch.wave_minutes * period / 1440.0)))
    speed += _waves(rng, days * period, arch.sigma_wave, width)
    speed += _incidents(rng, days * period, period, arch.incident_rate, arch.incident_depth,
                        arch.incident_minutes)
    speed += rng.normal(0.0, arch.sigma_obs, days * period) if arch.sigma_obs else 0.0
    return np.clip(speed, 1.0, 130.0)


def generate(spec: SynthSpec | None = None) -> tuple[list[SpeedSeries], dict[str, str]]:
    """Build the network; returns the series and a segment -> archetype-name map."""
    spec = spec or SynthSpec()
    series, labels = [], {}
    k = 0
    for a_idx, arch in enumerate(spec.archetypes):
        for j in range(spec.segments_per_archetype):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, a_idx, j]))
            seg_id = f"seg{k:03d}"
            series.append(SpeedSeries(seg_id, spec.t0, spec.step, generate_segment(arch, spec, rng)))
            labels[seg_id] = arch.name
            k += 1
    return series, labels
