"""Loading, gap filling, calendar filtering and min-max scaling of speed series."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_STEP = 300
DEFAULT_UTC_OFFSET_HOURS = 8.0


class IngestError(ValueError):
    pass


class DegenerateScaleError(ValueError):
    pass


@dataclass(frozen=True)
class SpeedSeries:
    """One segment's speeds (km/h); NaN marks a missing sample.

    Freshly loaded series are equally spaced (``t0 + i * step``). After calendar
    filtering whole days are removed, so the surviving sample times are carried
    explicitly in ``timestamps``.
    """

    segment_id: str
    t0: int
    step: int
    values: np.ndarray
    timestamps: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise IngestError("values must be one-dimensional")
        if self.step <= 0:
            raise IngestError("step must be positive")
        present = values[~np.isnan(values)]
        if not np.all(np.isfinite(present)):
            raise IngestError(f"segment {self.segment_id}: non-finite speed")
        if np.any(present < 0):
            raise IngestError(f"segment {self.segment_id}: negative speed")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.int64)
            if ts.shape != values.shape:
                raise IngestError("timestamps and values differ in length")
            object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        if self.timestamps is not None:
            return self.timestamps
        return self.t0 + self.step * np.arange(len(self.values), dtype=np.int64)

    def with_values(self, values) -> "SpeedSeries":
        return SpeedSeries(self.segment_id, self.t0, self.step, values, self.timestamps)


@dataclass(frozen=True)
class CalendarFilter:
    exclude_weekends: bool = False
    exclude_dates: tuple[dt.date, ...] = ()

    def __post_init__(self):
        dates = []
        for d in self.exclude_dates:
            if isinstance(d, str):
                d = dt.date.fromisoformat(d)
            if not isinstance(d, dt.date):
                raise IngestError(f"not a calendar date: {d!r}")
            dates.append(d)
        object.__setattr__(self, "exclude_dates", tuple(dates))

    def excludes(self, day: dt.date) -> bool:
        return (self.exclude_weekends and day.weekday() >= 5) or day in self.exclude_dates


@dataclass(frozen=True)
class MinMaxScaler:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateScaleError(f"max ({self.max}) must exceed min ({self.min})")

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min) / (self.max - self.min)

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * (self.max - self.min) + self.min


def fit_minmax(values) -> MinMaxScaler:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise DegenerateScaleError("no finite values to fit")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        raise DegenerateScaleError("constant input, min equals max")
    return MinMaxScaler(lo, hi)


def _tz(utc_offset_hours: float) -> dt.timezone:
    return dt.timezone(dt.timedelta(hours=utc_offset_hours))


def parse_timestamp(text: str, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> int:
    """Integer epoch seconds, or ISO-8601 (naive times are read in the local offset)."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    stamp = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=_tz(utc_offset_hours))
    return int(stamp.timestamp())


def local_date(epoch: int, utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> dt.date:
    return dt.datetime.fromtimestamp(int(epoch), _tz(utc_offset_hours)).date()


def load_csv(path, step: int = DEFAULT_STEP,
             utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> list[SpeedSeries]:
    """Read ``segment_id,timestamp,speed`` rows into one series per segment.

    Absent timestamps between a segment's first and last row become NaN.
    """
    rows: dict[str, dict[int, float]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["segment_id", "timestamp", "speed"]:
            raise IngestError("line 1: expected header 'segment_id,timestamp,speed'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"line {lineno}: expected 3 fields, got {len(row)}")
            seg, ts_text, speed_text = row
            seg = seg.strip()
            try:
                ts = parse_timestamp(ts_text, utc_offset_hours)
                speed = float(speed_text)
            except ValueError as exc:
                raise IngestError(f"line {lineno}: malformed row ({exc})") from None
            if not np.isfinite(speed):
                raise IngestError(f"line {lineno}: non-finite speed")
            if speed < 0:
                raise IngestError(f"line {lineno}: negative speed {speed_text.strip()}")
            if seg not in rows:
                rows[seg] = {}
                order.append(seg)
            if ts in rows[seg]:
                raise IngestError(f"line {lineno}: duplicate timestamp {ts} for segment {seg}")
            rows[seg][ts] = speed
    series = []
    for seg in order:
        stamps = np.array(sorted(rows[seg]), dtype=np.int64)
        t0 = int(stamps[0])
        offsets = stamps - t0
        if np.any(offsets % step):
            bad = int(stamps[np.nonzero(offsets % step)[0][0]])
            raise IngestError(f"segment {seg}: timestamp {bad} is off the {step}s sampling grid")
        values = np.full(int(offsets[-1] // step) + 1, np.nan)
        values[offsets // step] = [rows[seg][int(t)] for t in stamps]
        series.append(SpeedSeries(seg, t0, step, values))
    return series


def write_csv(series: list[SpeedSeries], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("segment_id,timestamp,speed\n")
        for s in series:
            for t, v in zip(s.times, s.values):
                if not np.isnan(v):
                    fh.write(f"{s.segment_id},{int(t)},{v:.6f}\n")
    return path


def fill_gaps(s: SpeedSeries, max_gap: int = 2) -> SpeedSeries:
    """Linearly interpolate interior runs of at most ``max_gap`` missing samples.

    Longer runs, and runs touching either end, stay NaN; the periods holding
    them are dropped later by the periodic split.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    v = s.values.copy()
    missing = np.isnan(v)
    if missing.all():
        raise IngestError(f"segment {s.segment_id}: series entirely missing")
    if not missing.any() or max_gap == 0:
        return s.with_values(v)
    idx = np.arange(len(v))
    edges = np.diff(np.concatenate([[0], missing.view(np.int8), [0]]))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    for a, b in zip(starts, ends):
        if b - a > max_gap or a == 0 or b == len(v):
            continue
        v[a:b] = np.interp(idx[a:b], [a - 1, b], [v[a - 1], v[b]])
    return s.with_values(v)


def unusable_periods(s: SpeedSeries, period: int) -> np.ndarray:
    """Indices of whole periods that still contain missing values."""
    n = len(s) // period
    blocks = np.isnan(s.values[:n * period]).reshape(n, period)
    return np.nonzero(blocks.any(axis=1))[0]


def trim_to_days(s: SpeedSeries, period: int = 288,
                 utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> SpeedSeries:
    """Drop leading and trailing samples so the series covers whole local days."""
    if s.timestamps is not None:
        raise IngestError("trim_to_days expects an equally spaced series")
    day_seconds = period * s.step
    local0 = s.t0 + int(utc_offset_hours * 3600)
    lead = (-(local0 % day_seconds) % day_seconds) // s.step
    usable = (len(s) - lead) // period * period
    if usable <= 0:
        raise IngestError(f"segment {s.segment_id}: shorter than one whole day")
    return SpeedSeries(s.segment_id, s.t0 + lead * s.step, s.step, s.values[lead:lead + usable])


def apply_calendar_filter(s: SpeedSeries, f: CalendarFilter, period: int = 288,
                          utc_offset_hours: float = DEFAULT_UTC_OFFSET_HOURS) -> SpeedSeries:
    """Remove every period whose first sample falls on an excluded local date."""
    if len(s) % period:
        raise IngestError(f"length {len(s)} is not a whole number of {period}-sample periods")
    times = s.times
    n_days = len(s) // period
    days = [local_date(times[j * period], utc_offset_hours) for j in range(n_days)]
    for d in f.exclude_dates:
        if not days[0] <= d <= days[-1]:
            raise IngestError(f"excluded date {d} lies outside the series span {days[0]}..{days[-1]}")
    keep = np.array([not f.excludes(d) for d in days])
    if not keep.any():
        raise IngestError(f"segment {s.segment_id}: calendar filter removes every day")
    if keep.all():
        return s
    mask = np.repeat(keep, period)
    kept_times = times[mask]
    return SpeedSeries(s.segment_id, int(kept_times[0]), s.step, s.values[mask], kept_times)
