from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wssm import data
from wssm.data import (CSV_HEADER, HOUR, NormStats, OrderingError, ParseError, StationSeries, build_windows,
                       chrono_split, climatology, diurnal_phase_hours, fit_norm, format_timestamp, gen_synthetic,
                       load_dataset, load_station, make_windows, split_of, write_dataset, write_meta)
from wssm.embedding import ConfigurationError, StationMeta

META = StationMeta("S1", 10.0, 20.0, 30.0)
T0 = datetime(2020, 1, 1)


def write_csv(tmp_path, rows, meta=META):
    """rows: list of (hour offset, [5 cells as strings])."""
    lines = [",".join(CSV_HEADER)]
    for h, cells in rows:
        lines.append(",".join([format_timestamp(T0 + h * HOUR)] + cells))
    path = tmp_path / f"{meta.id}.csv"
    path.write_text("\n".join(lines) + "\n")
    write_meta(tmp_path / f"{meta.id}.json", meta)
    return path


def full(v):
    return [str(v)] * 5


def test_short_gap_is_interpolated(tmp_path):
    rows = [(0, full(10.0)), (1, [""] + full(10.0)[1:]), (2, full(12.0))]
    (seg,) = load_station(write_csv(tmp_path, rows))
    assert seg.values[0, 1] == 11.0
    assert seg.missing_mask[0, 1] and not seg.missing_mask[1, 1]


def test_wind_direction_wraps(tmp_path):
    (seg,) = load_station(write_csv(tmp_path, [(0, ["1", "1", "1", "360.0", "1"])]))
    assert seg.values[3, 0] == 0.0


def test_long_gap_splits_station(tmp_path):
    rows = [(h, full(h)) for h in range(5)] + [(h, full(h)) for h in range(13, 18)]
    segs = load_station(write_csv(tmp_path, rows))
    assert [s.length for s in segs] == [5, 5]
    assert segs[1].start == T0 + 13 * HOUR


def test_six_hour_gap_is_filled(tmp_path):
    rows = [(h, full(h)) for h in range(3)] + [(h, full(h)) for h in range(9, 11)]
    (seg,) = load_station(write_csv(tmp_path, rows))
    assert seg.length == 11
    np.testing.assert_allclose(seg.values[0], np.arange(11.0))


def test_leading_and_trailing_missing_trimmed(tmp_path):
    rows = [(0, [""] + full(1)[1:]), (1, full(2)), (2, full(3)), (3, full(4)[:4] + [""])]
    (seg,) = load_station(write_csv(tmp_path, rows))
    assert seg.start == T0 + HOUR and seg.length == 2


def test_parse_errors_carry_line_numbers(tmp_path):
    path = write_csv(tmp_path, [(0, full(1)), (1, ["x", "1", "1", "1", "1"])])
    with pytest.raises(ParseError, match=":3:"):
        load_station(path)
    path.write_text(",".join(CSV_HEADER) + "\n2020-01-01 00:00,1,1,1,1,1\n")
    with pytest.raises(ParseError, match=":2: bad timestamp"):
        load_station(path)
    path.write_text("time,a,b\n")
    with pytest.raises(ParseError, match=":1:"):
        load_station(path)


def test_non_monotone_timestamps(tmp_path):
    path = write_csv(tmp_path, [(1, full(1)), (0, full(1))])
    with pytest.raises(OrderingError, match=":3:"):
        load_station(path)


def test_dataset_round_trip_and_determinism(tmp_path):
    series, _ = gen_synthetic(2, 1, seed=5)
    write_dataset(tmp_path / "a", series)
    write_dataset(tmp_path / "b", series)
    for name in ("SYN0000.csv", "SYN0001.json", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = load_dataset(tmp_path / "a")
    assert [s.meta for s in back] == [s.meta for s in series]
    for got, want in zip(back, series):
        expected = want.values.copy()
        expected[3] = np.mod(np.round(expected[3], 4), 360.0)
        np.testing.assert_allclose(got.values, expected, atol=5e-5)
    again = load_dataset(tmp_path / "a")
    np.testing.assert_array_equal(again[0].values, back[0].values)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        load_dataset(tmp_path)


# normalization --------------------------------------------------------------------------


def _series(values, start=T0, meta=META):
    return StationSeries(meta, start, np.asarray(values, dtype=float))


def test_fit_norm_rejects_constant_variable():
    vals = np.random.default_rng(0).normal(size=(5, 10))
    vals[0] = 5.0
    with pytest.raises(ConfigurationError, match="temperature_c"):
        fit_norm([_series(vals)])


def test_fit_norm_population_convention():
    vals = np.tile([[0.0, 2.0]], (5, 1))
    norm = fit_norm([_series(vals)])
    np.testing.assert_array_equal(norm.mean, np.ones(5))
    np.testing.assert_array_equal(norm.std, np.ones(5))


def test_fit_norm_pools_stations():
    a = np.tile([[0.0, 2.0]], (5, 1))
    b = np.tile([[4.0, 6.0]], (5, 1))
    norm = fit_norm([_series(a), _series(b)])
    np.testing.assert_allclose(norm.mean, 3.0)
    np.testing.assert_allclose(norm.std, np.sqrt(5.0))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 7), elements=st.floats(-1e4, 1e4)),
       arrays(np.float64, 5, elements=st.floats(0.1, 1e3)), arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)))
def test_normalization_round_trip(x, std, mean):
    norm = NormStats(mean, std)
    back = norm.denormalize(norm.normalize(x))
    np.testing.assert_allclose(back, x, atol=1e-12 * max(1.0, np.abs(x).max(), np.abs(mean).max()))


# windows ---------------------------------------------------------------------------------


@pytest.mark.parametrize("extra,count", [(0, 1), (5, 6)])
def test_window_counts(extra, count):
    s = _series(np.zeros((5, 24 + 8 + extra)))
    assert len(make_windows(s, 24, 8)) == count


def test_window_stride_and_short_segment():
    s = _series(np.zeros((5, 40)))
    assert len(make_windows(s, 24, 8, stride=4)) == 3
    assert make_windows(_series(np.zeros((5, 10))), 24, 8) == []


def test_windows_are_contiguous_and_disjoint():
    s = _series(np.random.default_rng(1).normal(size=(5, 60)))
    for w in make_windows(s, 12, 6, stride=5):
        assert w.future_stamps[0] == w.past_stamps[-1] + HOUR
        assert all(b - a == HOUR for a, b in zip(w.past_stamps + w.future_stamps,
                                                 (w.past_stamps + w.future_stamps)[1:]))
        assert not set(w.past_stamps) & set(w.future_stamps)


def test_build_windows_matches_make_windows():
    rng = np.random.default_rng(2)
    s = _series(rng.normal(size=(5, 50)) + 3.0)
    norm = fit_norm([s])
    ws = build_windows([s], 12, 6, norm, stride=7)
    samples = make_windows(s, 12, 6, stride=7)
    assert len(ws) == len(samples)
    for i, smp in enumerate(samples):
        np.testing.assert_allclose(ws.x[i], norm.normalize(smp.x), atol=1e-15)
        np.testing.assert_allclose(ws.y[i], norm.normalize(smp.y), atol=1e-15)
        np.testing.assert_allclose(ws.future_feats[i], [data.location_features(META).tolist()
                                                         + data.time_features(ts, 1)[0].tolist()
                                                         for ts in smp.future_stamps], atol=1e-15)
        assert ws.starts[i] == smp.future_stamps[0]


# splits -----------------------------------------------------------------------------------


def test_split_of_straddle_and_membership():
    assert split_of(datetime(2021, 12, 30), datetime(2022, 1, 4)) is None
    assert split_of(datetime(2022, 3, 1), datetime(2022, 3, 4)) == "val"


def test_overlapping_boundaries_rejected():
    with pytest.raises(ConfigurationError, match="overlap"):
        chrono_split([], {"train": (2014, 2020), "val": (2020, 2021)})


def test_three_year_split_counts():
    series, _ = gen_synthetic(1, 3, seed=0)
    parts = chrono_split(series, {"train": (2014, 2014), "val": (2015, 2015), "test": (2016, 2016)})
    norm = fit_norm(parts["train"])
    counts = {k: len(build_windows(v, 24, 8, norm)) for k, v in parts.items()}
    # hours per year minus (T + H - 1); 2016 is a leap year
    assert counts == {"train": 8760 - 31, "val": 8760 - 31, "test": 8784 - 31}
    for name, (lo, hi) in {"train": (2014, 2014), "val": (2015, 2015), "test": (2016, 2016)}.items():
        for seg in parts[name]:
            assert seg.start.year >= lo and seg.end.year <= hi


# synthetic generator -----------------------------------------------------------------------


def test_synthetic_is_deterministic():
    a, _ = gen_synthetic(2, 1, seed=3)
    b, _ = gen_synthetic(2, 1, seed=3)
    for x, y in zip(a, b):
        assert x.meta == y.meta
        np.testing.assert_array_equal(x.values, y.values)


def test_synthetic_rejects_zero_stations():
    with pytest.raises(ConfigurationError):
        gen_synthetic(0, 1, seed=0)


def test_diurnal_peak_shifts_with_longitude():
    west = StationMeta("w", 30.0, 0.0, 100.0)
    east = StationMeta("e", 30.0, 30.0, 100.0)
    assert diurnal_phase_hours(30.0) - diurnal_phase_hours(0.0) == 2.0
    start = datetime(2015, 4, 1)
    cw = climatology(west, start, 72)
    ce = climatology(east, start, 72)
    # the eastern station runs two hours ahead; only the slow annual term differs
    np.testing.assert_allclose(ce[:, :-2], cw[:, 2:], atol=0.05)
    assert np.argmax(ce[0, :24]) == (np.argmax(cw[0, :24]) - 2) % 24


def test_spike_rate_near_expectation():
    counts = []
    for seed in range(4):
        _, truth = gen_synthetic(2, 1, seed=seed)
        counts += [c for st_ in truth["stations"] for c in st_["spike_count"]]
    expected = 8760 * data.SPIKE_PROB
    assert 0.5 * expected <= np.mean(counts) <= 1.5 * expected


def test_synthetic_ranges():
    series, _ = gen_synthetic(3, 1, seed=9)
    for s in series:
        assert s.values[2].min() >= 0.0
        assert (s.values[3] >= 0).all() and (s.values[3] < 360).all()
        assert s.length == 8760 and s.stamps()[1] - s.stamps()[0] == timedelta(hours=1)
