"""Station series: CSV/JSON ingestion, gap policy, normalization, windowing,
chronological splits and a synthetic generator.

File layout of a dataset root::

    manifest.txt        station ids, one per line
    <id>.csv            timestamp,temperature_c,dewpoint_c,wind_speed_ms,
                        wind_direction_deg,sea_level_pressure_hpa
    <id>.json           {"id", "latitude_deg", "longitude_deg", "elevation_m"}

Timestamps are hourly UTC ``YYYY-MM-DDThh:00:00Z``; an empty field is missing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import ConfigurationError, StationMeta

VARIABLES = (
    "temperature_c",
    "dewpoint_c",
    "wind_speed_ms",
    "wind_direction_deg",
    "sea_level_pressure_hpa",
)
DISPLAY_NAMES = ("Temperature", "Dewpoint", "Wind Rate", "Wind Direc.", "Sea Level")
CSV_HEADER = ("timestamp",) + VARIABLES
TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
MAX_FILL_GAP = 6
HOUR = timedelta(hours=1)
WIND_DIR = VARIABLES.index("wind_direction_deg")


class ParseError(ValueError):
    pass


class OrderingError(ValueError):
    pass


@dataclass
class StationSeries:
    meta: StationMeta
    start: datetime
    values: np.ndarray  # (M, L) physical units
    missing_mask: np.ndarray = None  # True where the value was filled

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.missing_mask is None:
            self.missing_mask = np.zeros(self.values.shape, dtype=bool)

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def end(self) -> datetime:
        return self.start + (self.length - 1) * HOUR

    def stamps(self, lo=0, hi=None) -> list[datetime]:
        hi = self.length if hi is None else hi
        return [self.start + i * HOUR for i in range(lo, hi)]


def parse_timestamp(text: str) -> datetime:
    ts = datetime.strptime(text, TIME_FORMAT)
    if ts.minute or ts.second:
        raise ValueError(f"timestamp {text!r} is not on the hour")
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.strftime(TIME_FORMAT)


def read_meta(path) -> StationMeta:
    raw = json.loads(Path(path).read_text())
    return StationMeta(str(raw["id"]), float(raw["latitude_deg"]), float(raw["longitude_deg"]),
                       float(raw["elevation_m"]))


def write_meta(path, meta: StationMeta):
    Path(path).write_text(json.dumps({
        "id": meta.id,
        "latitude_deg": meta.latitude,
        "longitude_deg": meta.longitude,
        "elevation_m": meta.elevation,
    }, sort_keys=True) + "\n")


def _read_rows(csv_path):
    stamps, rows = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"{csv_path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"{csv_path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[0].strip())
            except ValueError as exc:
                raise ParseError(f"{csv_path}:{lineno}: bad timestamp {row[0]!r}") from exc
            vals = []
            for name, cell in zip(VARIABLES, row[1:]):
                cell = cell.strip()
                if not cell:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError as exc:
                    raise ParseError(f"{csv_path}:{lineno}: non-numeric {name} {cell!r}") from exc
                if not math.isfinite(v):
                    raise ParseError(f"{csv_path}:{lineno}: non-finite {name} {cell!r}")
                vals.append(v)
            if stamps and ts <= stamps[-1]:
                raise OrderingError(f"{csv_path}:{lineno}: timestamp {row[0]} does not follow {format_timestamp(stamps[-1])}")
            stamps.append(ts)
            rows.append(vals)
    return stamps, rows


def _long_gap_hours(col: np.ndarray) -> np.ndarray:
    """Mask of hours inside missing runs that must not be interpolated."""
    bad = np.zeros(col.shape, dtype=bool)
    miss = np.isnan(col)
    n = len(col)
    i = 0
    while i < n:
        if not miss[i]:
            i += 1
            continue
        j = i
        while j < n and miss[j]:
            j += 1
        if j - i > MAX_FILL_GAP or i == 0 or j == n:
            bad[i:j] = True
        i = j
    return bad


def split_segments(meta: StationMeta, start: datetime, grid: np.ndarray) -> list[StationSeries]:
    """Apply the gap policy to an hourly (M, L) grid with NaN for missing."""
    cut = np.zeros(grid.shape[1], dtype=bool)
    for col in grid:
        cut |= _long_gap_hours(col)
    segments = []
    i, n = 0, grid.shape[1]
    while i < n:
        if cut[i]:
            i += 1
            continue
        j = i
        while j < n and not cut[j]:
            j += 1
        seg = grid[:, i:j]
        ok = ~np.isnan(seg).any(axis=0)
        if ok.any():
            lo = int(np.argmax(ok))
            hi = len(ok) - int(np.argmax(ok[::-1]))
            seg = seg[:, lo:hi]
            mask = np.isnan(seg)
            filled = seg.copy()
            t = np.arange(seg.shape[1])
            for m in range(seg.shape[0]):
                if mask[m].any():
                    filled[m, mask[m]] = np.interp(t[mask[m]], t[~mask[m]], seg[m, ~mask[m]])
            segments.append(StationSeries(meta, start + (i + lo) * HOUR, filled, mask))
        i = j
    return segments


def load_station(csv_path, meta_path=None) -> list[StationSeries]:
    """Read one station; returns its usable contiguous segments in time order."""
    csv_path = Path(csv_path)
    meta = read_meta(meta_path if meta_path is not None else csv_path.with_suffix(".json"))
    stamps, rows = _read_rows(csv_path)
    if not stamps:
        return []
    length = int((stamps[-1] - stamps[0]) // HOUR) + 1
    grid = np.full((len(VARIABLES), length), np.nan)
    idx = np.array([int((ts - stamps[0]) // HOUR) for ts in stamps])
    grid[:, idx] = np.array(rows, dtype=np.float64).T
    grid[WIND_DIR] = np.mod(grid[WIND_DIR], 360.0)
    return split_segments(meta, stamps[0], grid)


def write_station(root, series: StationSeries):
    root = Path(root)
    write_meta(root / f"{series.meta.id}.json", series.meta)
    with open(root / f"{series.meta.id}.csv", "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i, ts in enumerate(series.stamps()):
            cells = ["" if series.missing_mask[m, i] else f"{series.values[m, i]:.4f}"
                     for m in range(series.values.shape[0])]
            fh.write(format_timestamp(ts) + "," + ",".join(cells) + "\n")


def read_manifest(root) -> list[str]:
    path = Path(root) / "manifest.txt"
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_dataset(root) -> list[StationSeries]:
    root = Path(root)
    out = []
    for sid in read_manifest(root):
        out.extend(load_station(root / f"{sid}.csv", root / f"{sid}.json"))
    return out


def write_dataset(root, series: Sequence[StationSeries]):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in series:
        write_station(root, s)
    (root / "manifest.txt").write_text("".join(f"{s.meta.id}\n" for s in series))


# normalization ---------------------------------------------------------------


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, values):
        """Normalize an array whose variable axis is -2 (..., M, L)."""
        return (np.asarray(values) - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, values):
        return np.asarray(values) * self.std[:, None] + self.mean[:, None]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, raw):
        return cls(np.array(raw["mean"], dtype=np.float64), np.array(raw["std"], dtype=np.float64))


def fit_norm(train_series: Sequence[StationSeries]) -> NormStats:
    """Pooled per-variable mean and population std over all training hours."""
    if not train_series:
        raise ConfigurationError("fit_norm needs at least one training series")
    pooled = np.concatenate([s.values for s in train_series], axis=1)
    mean = pooled.mean(axis=1)
    std = pooled.std(axis=1)
    for name, sd in zip(VARIABLES, std):
        if not sd > 0:
            raise ConfigurationError(f"variable {name} has zero variance in the training data")
    return NormStats(mean, std)


# windows ------------------------------------------------------------------------


@dataclass
class ForecastSample:
    meta: StationMeta
    past_stamps: list
    future_stamps: list
    x: np.ndarray  # (M, T)
    y: np.ndarray  # (M, H)


def window_starts(length: int, T: int, H: int, stride: int = 1) -> range:
    if stride < 1:
        raise ConfigurationError("window stride must be >= 1")
    return range(0, max(0, length - T - H + 1), stride)


def make_windows(series: StationSeries, T: int, H: int, stride: int = 1) -> list[ForecastSample]:
    out = []
    for i in window_starts(series.length, T, H, stride):
        out.append(ForecastSample(
            series.meta,
            series.stamps(i, i + T),
            series.stamps(i + T, i + T + H),
            series.values[:, i:i + T].copy(),
            series.values[:, i + T:i + T + H].copy(),
        ))
    return out


def time_features(start: datetime, length: int) -> np.ndarray:
    """Normalized (year, month, day, hour) for ``length`` hourly stamps, shape (L, 4)."""
    t = np.datetime64(start, "h") + np.arange(length)
    year = t.astype("datetime64[Y]").astype(np.int64) + 1970
    month = t.astype("datetime64[M]").astype(np.int64) % 12 + 1
    day = (t.astype("datetime64[D]") - t.astype("datetime64[M]")).astype(np.int64) + 1
    hour = (t - t.astype("datetime64[D]")).astype(np.int64)
    feats = np.stack([(year - 2014) / 10.0, (month - 6.5) / 5.5, (day - 16.0) / 15.0,
                      (hour - 11.5) / 11.5], axis=1)
    return np.clip(feats, -1.0, 1.0)


def location_features(meta: StationMeta) -> np.ndarray:
    return np.clip([meta.latitude / 90.0, meta.longitude / 180.0, meta.elevation / 9000.0], -1.0, 1.0)


@dataclass
class WindowSet:
    """Stacked, normalized samples ready for batching."""

    x: np.ndarray            # (n, M, T)
    y: np.ndarray            # (n, M, H)
    past_feats: np.ndarray   # (n, T, 7)
    future_feats: np.ndarray  # (n, H, 7)
    station: list = field(default_factory=list)
    starts: list = field(default_factory=list)  # first target stamp per sample

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx):
        idx = np.asarray(idx)
        return WindowSet(self.x[idx], self.y[idx], self.past_feats[idx], self.future_feats[idx],
                         [self.station[i] for i in idx], [self.starts[i] for i in idx])


def build_windows(series_list: Iterable[StationSeries], T: int, H: int, norm: NormStats,
                  stride: int = 1) -> WindowSet:
    """Normalized sliding windows over every series, ordered by (station, start)."""
    xs, ys, pf, ff, station, starts = [], [], [], [], [], []
    items = sorted(series_list, key=lambda s: (s.meta.id, s.start))
    for s in items:
        idx = np.array(window_starts(s.length, T, H, stride), dtype=np.int64)
        if idx.size == 0:
            continue
        vals = norm.normalize(s.values)
        geo = np.concatenate([np.broadcast_to(location_features(s.meta), (s.length, 3)),
                              time_features(s.start, s.length)], axis=1)
        past = idx[:, None] + np.arange(T)
        fut = idx[:, None] + T + np.arange(H)
        xs.append(np.moveaxis(vals[:, past], 1, 0))
        ys.append(np.moveaxis(vals[:, fut], 1, 0))
        pf.append(geo[past])
        ff.append(geo[fut])
        station.extend([s.meta.id] * idx.size)
        starts.extend(s.start + int(i + T) * HOUR for i in idx)
    m = len(VARIABLES) if not items else items[0].values.shape[0]
    if not xs:
        return WindowSet(np.zeros((0, m, T)), np.zeros((0, m, H)), np.zeros((0, T, 7)),
                         np.zeros((0, H, 7)), [], [])
    return WindowSet(np.concatenate(xs), np.concatenate(ys), np.concatenate(pf),
                     np.concatenate(ff), station, starts)


# chronological splits ---------------------------------------------------------------

DEFAULT_SPLITS = {"train": (2014, 2021), "val": (2022, 2022), "test": (2023, 2023)}


def _check_boundaries(boundaries):
    spans = sorted((lo, hi, name) for name, (lo, hi) in boundaries.items())
    for lo, hi, name in spans:
        if lo > hi:
            raise ConfigurationError(f"split {name} has reversed years {lo}-{hi}")
    for (lo1, hi1, n1), (lo2, hi2, n2) in zip(spans, spans[1:]):
        if lo2 <= hi1:
            raise ConfigurationError(f"splits {n1} ({lo1}-{hi1}) and {n2} ({lo2}-{hi2}) overlap")


def split_of(first: datetime, last: datetime, boundaries=DEFAULT_SPLITS):
    """Split name whose years contain the whole span, or None if it straddles."""
    _check_boundaries(boundaries)
    for name, (lo, hi) in boundaries.items():
        if lo <= first.year and last.year <= hi:
            return name
    return None


def crop_series(series: StationSeries, year_lo: int, year_hi: int):
    lo = max(series.start, datetime(year_lo, 1, 1))
    hi = min(series.end, datetime(year_hi, 12, 31, 23))
    if hi < lo:
        return None
    i = int((lo - series.start) // HOUR)
    j = int((hi - series.start) // HOUR) + 1
    return StationSeries(series.meta, lo, series.values[:, i:j].copy(), series.missing_mask[:, i:j].copy())


def chrono_split(series_set: Sequence[StationSeries], boundaries=DEFAULT_SPLITS) -> dict:
    """Crop every series to each split's years.

    Windows cut from a cropped series lie entirely inside its split, so samples
    that would straddle a boundary are never produced.
    """
    _check_boundaries(boundaries)
    out = {name: [] for name in boundaries}
    for s in series_set:
        for name, (lo, hi) in boundaries.items():
            part = crop_series(s, lo, hi)
            if part is not None:
                out[name].append(part)
    return out


# synthetic stations ------------------------------------------------------------------

BASE_MEAN = np.array([0.0, -6.0, 4.0, 180.0, 1013.0])
DIURNAL_AMP = np.array([5.0, 2.5, 1.5, 40.0, 1.5])
DIURNAL_PEAK_LOCAL = np.array([15.0, 15.0, 14.0, 12.0, 10.0])
ANNUAL_AMP = np.array([12.0, 10.0, 1.0, 30.0, 5.0])
NOISE_STD = np.array([1.5, 1.5, 0.8, 30.0, 2.0])
SPIKE_SCALE = np.array([8.0, 8.0, 2.0, 60.0, 6.0])
AR_RHO = 0.9
SPIKE_PROB = 0.003
HOURS_PER_YEAR = 8766.0


def diurnal_phase_hours(longitude: float) -> float:
    """UTC-to-local-solar-time offset: diurnal peaks occur ``lon/15`` hours earlier in UTC."""
    return longitude / 15.0


def climatology(meta: StationMeta, start: datetime, length: int) -> np.ndarray:
    """Noise-free (M, L) signal of the synthetic generator for one station."""
    t = np.arange(length, dtype=np.float64)
    t0 = (start - datetime(start.year, 1, 1)) / HOUR
    utc_hour = (start.hour + t) % 24.0
    lat = math.radians(meta.latitude)
    hemi = 1.0 if meta.latitude >= 0 else -1.0
    mean = BASE_MEAN.copy()
    mean[0] += 28.0 * math.cos(lat) - 6.5 * meta.elevation / 1000.0
    mean[1] += 28.0 * math.cos(lat) - 6.5 * meta.elevation / 1000.0
    diurnal_scale = (0.5 + 0.5 * math.cos(lat)) * (1.0 + meta.elevation / 3000.0)
    annual_scale = abs(math.sin(lat)) + 0.1
    local = utc_hour + diurnal_phase_hours(meta.longitude)
    diurnal = np.cos(2 * math.pi * (local[None, :] - DIURNAL_PEAK_LOCAL[:, None]) / 24.0)
    # annual maximum mid-July in the north, mid-January in the south
    annual = hemi * np.cos(2 * math.pi * (t0 + t - 4800.0) / HOURS_PER_YEAR)
    return (mean[:, None] + DIURNAL_AMP[:, None] * diurnal_scale * diurnal
            + ANNUAL_AMP[:, None] * annual_scale * annual[None, :])


def gen_synthetic(n_stations: int, years: int, seed: int, start_year: int = 2014):
    """Synthetic stations with geography-dependent cycles, AR(1) noise and spikes.

    Returns ``(series, truth)`` where ``truth`` records, per station, the
    spike positions and the constants of the generator.
    """
    if n_stations < 1:
        raise ConfigurationError("n_stations must be >= 1")
    if years < 1:
        raise ConfigurationError("years must be >= 1")
    rng = np.random.default_rng(seed)
    start = datetime(start_year, 1, 1)
    length = int((datetime(start_year + years, 1, 1) - start) // HOUR)
    series, stations = [], []
    for k in range(n_stations):
        meta = StationMeta(
            f"SYN{k:04d}",
            round(float(rng.uniform(-60.0, 70.0)), 4),
            round(float(rng.uniform(-180.0, 179.9)), 4),
            round(float(rng.uniform(0.0, 2500.0)), 1),
        )
        values = climatology(meta, start, length)
        innov = rng.normal(size=values.shape) * (NOISE_STD * math.sqrt(1 - AR_RHO**2))[:, None]
        noise = np.empty_like(innov)
        noise[:, 0] = rng.normal(size=values.shape[0]) * NOISE_STD
        for i in range(1, length):
            noise[:, i] = AR_RHO * noise[:, i - 1] + innov[:, i]
        spikes = rng.random(values.shape) < SPIKE_PROB
        magnitude = rng.uniform(4.0, 6.0, size=values.shape) * SPIKE_SCALE[:, None]
        values = values + noise + np.where(spikes, magnitude, 0.0)
        values[2] = np.maximum(values[2], 0.0)
        values[WIND_DIR] = np.mod(values[WIND_DIR], 360.0)
        series.append(StationSeries(meta, start, values))
        stations.append({"id": meta.id, "spike_count": spikes.sum(axis=1).tolist()})
    truth = {
        "stations": stations,
        "ar_rho": AR_RHO,
        "spike_prob": SPIKE_PROB,
        "diurnal_phase": "utc_peak = local_peak - longitude / 15",
    }
    return series, truth
