import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trafficast.ingest import (CalendarFilter, DegenerateScaleError, IngestError, SpeedSeries,
                               apply_calendar_filter, fill_gaps, fit_minmax, load_csv, local_date,
                               parse_timestamp, trim_to_days, unusable_periods, write_csv)


def epoch(day: dt.date, hours: float = 8.0) -> int:
    tz = dt.timezone(dt.timedelta(hours=hours))
    return int(dt.datetime.combine(day, dt.time(), tz).timestamp())


def write(tmp_path, text):
    p = tmp_path / "speeds.csv"
    p.write_text(text, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "segment_id,timestamp,speed\n"
                        "a,2017-09-04T00:00:00,50\na,2017-09-04T00:05:00,51.5\na,2017-09-04T00:10:00,49\n")
    [s] = load_csv(p)
    assert s.segment_id == "a" and len(s) == 3 and s.step == 300
    assert s.values.tolist() == [50.0, 51.5, 49.0]
    assert s.t0 == epoch(dt.date(2017, 9, 4))


def test_load_sorts_and_inserts_missing(tmp_path):
    t = 1_500_000_000
    p = write(tmp_path, f"segment_id,timestamp,speed\nb,{t + 900},4\nb,{t},1\nb,{t + 300},2\n")
    [s] = load_csv(p)
    assert np.isnan(s.values[2])
    assert s.values[[0, 1, 3]].tolist() == [1.0, 2.0, 4.0]
    np.testing.assert_array_equal(s.times, t + 300 * np.arange(4))


@pytest.mark.parametrize("body,needle", [
    ("a,1500000000,-5\n", "line 2"),
    ("a,1500000000,5\na,1500000000,6\n", "duplicate"),
    ("a,1500000000\n", "line 2"),
    ("a,notatime,5\n", "line 2"),
    ("a,1500000000,5\na,1500000100,6\n", "grid"),
])
def test_load_rejects(tmp_path, body, needle):
    with pytest.raises(IngestError, match=needle):
        load_csv(write(tmp_path, "segment_id,timestamp,speed\n" + body))


def test_load_requires_header(tmp_path):
    with pytest.raises(IngestError, match="header"):
        load_csv(write(tmp_path, "a,1,2\n"))


def test_csv_roundtrip_reconstructs_timestamps(tmp_path, network):
    series = [s.with_values(s.values[:600].copy()) for s in network[0][:3]]
    series[1].values[17] = np.nan
    back = load_csv(write_csv(series, tmp_path / "x.csv"))
    for a, b in zip(series, back):
        assert a.segment_id == b.segment_id
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_allclose(a.values, b.values, atol=5e-7, equal_nan=True)


def test_iso_and_epoch_agree():
    assert parse_timestamp("2017-09-04T00:00:00") == parse_timestamp("2017-09-03T16:00:00Z")
    assert parse_timestamp(" 12345 ") == 12345
    assert local_date(epoch(dt.date(2017, 9, 4))) == dt.date(2017, 9, 4)


def test_fill_gaps_examples():
    s = SpeedSeries("x", 0, 300, [50, np.nan, 60])
    assert fill_gaps(s, 1).values.tolist() == [50, 55, 60]
    s2 = SpeedSeries("x", 0, 300, [50, np.nan, np.nan, 60])
    assert np.isnan(fill_gaps(s2, 1).values).sum() == 2
    assert unusable_periods(fill_gaps(s2, 1), 4).tolist() == [0]
    s3 = SpeedSeries("x", 0, 300, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(fill_gaps(s3).values, s3.values)
    with pytest.raises(IngestError):
        fill_gaps(SpeedSeries("x", 0, 300, [np.nan, np.nan]))


@given(st.lists(st.one_of(st.none(), st.floats(0, 150)), min_size=2, max_size=60),
       st.integers(0, 4))
def test_fill_gaps_keeps_present_values(raw, max_gap):
    v = np.array([np.nan if x is None else x for x in raw])
    if np.isnan(v).all():
        return
    out = fill_gaps(SpeedSeries("p", 0, 300, v), max_gap).values
    present = ~np.isnan(v)
    np.testing.assert_array_equal(out[present], v[present])


def _days(start: dt.date, n: int) -> SpeedSeries:
    return SpeedSeries("d", epoch(start), 300, np.tile(np.linspace(20, 60, 288), n))


def test_calendar_week():
    s = _days(dt.date(2017, 9, 4), 7)  # Monday
    out = apply_calendar_filter(s, CalendarFilter(exclude_weekends=True))
    assert len(out) == 5 * 288
    kept = {local_date(t) for t in out.times[::288]}
    assert all(d.weekday() < 5 for d in kept)


def test_calendar_identity_and_all_removed():
    s = _days(dt.date(2017, 9, 4), 3)
    assert apply_calendar_filter(s, CalendarFilter()) is s
    with pytest.raises(IngestError):
        apply_calendar_filter(_days(dt.date(2017, 9, 9), 2), CalendarFilter(exclude_weekends=True))
    with pytest.raises(IngestError):
        apply_calendar_filter(s, CalendarFilter(exclude_dates=("2018-01-01",)))


def test_calendar_ninety_one_days_to_sixty():
    # Sep 1 - Nov 30 2017, weekends and the weekday part of the Oct 1-8 holiday removed
    s = _days(dt.date(2017, 9, 1), 91)
    holiday = tuple(dt.date(2017, 10, d) for d in range(1, 9))
    out = apply_calendar_filter(s, CalendarFilter(True, holiday))
    assert len(out) == 60 * 288
    assert len(out) % 288 == 0


def test_trim_to_days():
    t0 = epoch(dt.date(2017, 9, 4)) + 3600  # starts at 01:00 local
    s = SpeedSeries("t", t0, 300, np.arange(3 * 288, dtype=float))
    out = trim_to_days(s)
    assert len(out) == 2 * 288 and out.t0 == t0 + 23 * 3600


def test_minmax_examples():
    sc = fit_minmax([20, 70])
    assert (sc.min, sc.max) == (20, 70) and sc.transform(45) == 0.5
    np.testing.assert_array_equal(fit_minmax([0, 1]).transform([0.25, 0.75]), [0.25, 0.75])
    with pytest.raises(DegenerateScaleError):
        fit_minmax([30, 30, 30])


@given(st.floats(0, 200), st.floats(0.01, 200), st.floats(0, 1))
def test_minmax_roundtrip(lo, span, frac):
    sc = fit_minmax([lo, lo + span])
    v = lo + frac * span
    assert sc.inverse(sc.transform(v)) == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_series_validation():
    with pytest.raises(IngestError):
        SpeedSeries("n", 0, 300, [1.0, -1.0])
    with pytest.raises(IngestError):
        SpeedSeries("n", 0, 300, [1.0, np.inf])
