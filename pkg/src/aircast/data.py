"""Hourly readings to model-ready windows.

Pipeline: parse hourly CSV onto a dense (hour, station) grid -> impute gaps
-> aggregate to 3-hour blocks with wind converted to (u, v) components ->
slide fixed windows -> chronological split with train-only normalization
statistics. Processed series persist as .npz containers with JSON metadata.
"""

from __future__ import annotations

import csv
import json
import logging
import zipfile
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import (ConfigurationError, DataError, FormatError, ParseError,
                     UnknownStationError)
from .graph import Station

log = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1)
READINGS_HEADER = ["timestamp", "station_id", "pm25", "wind_speed", "wind_direction"]
CHANNELS = ("pm25", "wind_speed", "wind_direction")


@dataclass(frozen=True)
class RawReading:
    """One parsed CSV row; None marks a missing measurement."""

    timestamp: datetime
    station_id: str
    pm25: float | None
    wind_speed: float | None
    wind_direction: float | None


@dataclass
class HourlySeries:
    """Dense hourly grid; NaN encodes missing values."""

    start: datetime
    station_ids: list[str]
    pm25: np.ndarray            # (hours, n)
    wind_speed: np.ndarray
    wind_direction: np.ndarray

    @property
    def hours(self) -> int:
        return self.pm25.shape[0]

    def time_at(self, index: int) -> datetime:
        return self.start + timedelta(hours=index)


@dataclass
class Series3h:
    """3-hour blocks: PM2.5 block means plus mean wind components."""

    start: datetime
    station_ids: list[str]
    pm25: np.ndarray   # (steps, n)
    wind_u: np.ndarray
    wind_v: np.ndarray

    @property
    def steps(self) -> int:
        return self.pm25.shape[0]

    def time_at(self, index: int) -> datetime:
        return self.start + timedelta(hours=3 * index)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise DataError(f"normalization std must be positive, got {self.std}")

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass(frozen=True)
class WindowSample:
    """History/future pair for one forecast origin.

    x arrays are raw ug/m3 out of make_windows; inside a DatasetSplit they
    are in normalized units. Wind components stay physical (m/s).
    """

    x_hist: np.ndarray    # (history, n, 1)
    p_hist: np.ndarray    # (history, n, 2)
    x_future: np.ndarray  # (horizon, n, 1)
    start_time: datetime
    start_index: int


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    stats: NormStats
    ratio: tuple


def _parse_timestamp(text: str, where: str) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"{where}: bad timestamp {text!r}") from None
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    if ts.minute or ts.second or ts.microsecond:
        raise ParseError(f"{where}: timestamp {text!r} is not on the hour")
    return ts


def _parse_value(text: str, where: str, column: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{where}: non-numeric {column} {text!r}") from None
    if not np.isfinite(value):
        raise ParseError(f"{where}: non-finite {column}")
    return value


def parse_readings(path, station_ids) -> HourlySeries:
    """Read the readings CSV onto a dense hourly grid.

    Rows may arrive in any order; the grid spans min..max timestamp. A
    duplicate (timestamp, station) pair or a malformed row is an error naming
    the line; a station id outside the supplied registry is an error.
    """
    station_ids = list(station_ids)
    index = {sid: i for i, sid in enumerate(station_ids)}
    readings: list[tuple[int, RawReading]] = []
    seen: dict[tuple, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != READINGS_HEADER:
            raise ParseError(f"{path}: expected header {','.join(READINGS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != 5:
                raise ParseError(f"{where}: expected 5 fields, got {len(row)}")
            sid = row[1].strip()
            if sid not in index:
                raise UnknownStationError(f"{where}: unknown station {sid!r}")
            reading = RawReading(
                timestamp=_parse_timestamp(row[0].strip(), where),
                station_id=sid,
                pm25=_parse_value(row[2], where, "pm25"),
                wind_speed=_parse_value(row[3], where, "wind_speed"),
                wind_direction=_parse_value(row[4], where, "wind_direction"),
            )
            key = (reading.timestamp, sid)
            if key in seen:
                raise ParseError(
                    f"{where}: duplicate reading for {sid} at "
                    f"{reading.timestamp} (first seen on line {seen[key]})")
            seen[key] = lineno
            readings.append((lineno, reading))
    if not readings:
        raise DataError(f"{path}: no readings")
    start = min(r.timestamp for _, r in readings)
    end = max(r.timestamp for _, r in readings)
    hours = int((end - start).total_seconds() // 3600) + 1
    n = len(station_ids)
    grids = {ch: np.full((hours, n), np.nan) for ch in CHANNELS}
    for _, r in readings:
        row_i = int((r.timestamp - start).total_seconds() // 3600)
        col = index[r.station_id]
        for ch in CHANNELS:
            value = getattr(r, ch)
            if value is not None:
                grids[ch][row_i, col] = value
    return HourlySeries(start=start, station_ids=station_ids,
                        pm25=grids["pm25"], wind_speed=grids["wind_speed"],
                        wind_direction=grids["wind_direction"])


def _impute_column(values: np.ndarray, global_mean: float) -> np.ndarray:
    """Fill one station's hourly channel.

    Missing entries take the mean of observed values in the preceding 24
    hours; if that window holds nothing, the last observed value; leading
    gaps (nothing observed yet) take the dataset-wide mean of the channel.
    """
    observed = np.isfinite(values)
    out = values.copy()
    last_seen = np.nan
    for t in range(values.size):
        if observed[t]:
            last_seen = values[t]
            continue
        lo = max(0, t - 24)
        window = values[lo:t][observed[lo:t]]
        if window.size:
            out[t] = window.mean()
        elif np.isfinite(last_seen):
            out[t] = last_seen
        else:
            out[t] = global_mean
    return out


def impute_missing(series: HourlySeries) -> HourlySeries:
    """Fill every gap; observed values are never modified."""
    filled = {}
    for ch in CHANNELS:
        grid = getattr(series, ch)
        if not np.isfinite(grid).any():
            raise DataError(f"channel {ch} has no observed values")
        global_mean = float(np.nanmean(grid))
        cols = []
        for col in range(grid.shape[1]):
            if not np.isfinite(grid[:, col]).any():
                raise DataError(
                    f"station {series.station_ids[col]!r} has no observed "
                    f"{ch} values")
            cols.append(_impute_column(grid[:, col], global_mean))
        filled[ch] = np.column_stack(cols)
    return HourlySeries(start=series.start, station_ids=list(series.station_ids),
                        pm25=filled["pm25"], wind_speed=filled["wind_speed"],
                        wind_direction=filled["wind_direction"])


def wind_components(speed: np.ndarray, direction_deg: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Meteorological direction (blowing FROM, degrees clockwise of north)
    to eastward u and northward v flow components."""
    rad = np.asarray(direction_deg, dtype=np.float64) * np.pi / 180.0
    u = -np.asarray(speed, dtype=np.float64) * np.sin(rad)
    v = -np.asarray(speed, dtype=np.float64) * np.cos(rad)
    return u, v


def resample_3h(series: HourlySeries) -> Series3h:
    """Mean-pool complete 3-hour blocks; a trailing partial block is dropped."""
    if np.isnan(series.pm25).any() or np.isnan(series.wind_speed).any() \
            or np.isnan(series.wind_direction).any():
        raise DataError("resample_3h requires an imputed series")
    hours = series.hours
    steps = hours // 3
    if steps == 0:
        raise DataError(f"series of {hours} hours has no complete 3-hour block")
    dropped = hours - 3 * steps
    if dropped:
        log.warning("dropping %d trailing hour(s) short of a 3-hour block", dropped)
    n = len(series.station_ids)
    pm = series.pm25[:3 * steps].reshape(steps, 3, n).mean(axis=1)
    u, v = wind_components(series.wind_speed, series.wind_direction)
    u3 = u[:3 * steps].reshape(steps, 3, n).mean(axis=1)
    v3 = v[:3 * steps].reshape(steps, 3, n).mean(axis=1)
    return Series3h(start=series.start, station_ids=list(series.station_ids),
                    pm25=pm, wind_u=u3, wind_v=v3)


def make_windows(series: Series3h, history_steps: int = 24,
                 horizon_steps: int = 24, stride: int = 1) -> list[WindowSample]:
    """Slide (history + horizon)-step windows over the 3-hour series."""
    if history_steps < 1 or horizon_steps < 1 or stride < 1:
        raise ConfigurationError("window sizes and stride must be positive")
    total = history_steps + horizon_steps
    if series.steps < total:
        raise DataError(
            f"series of {series.steps} steps is shorter than one "
            f"{total}-step window")
    windows = []
    wind = np.stack([series.wind_u, series.wind_v], axis=-1)  # (steps, n, 2)
    x = series.pm25[..., None]                                # (steps, n, 1)
    for s in range(0, series.steps - total + 1, stride):
        windows.append(WindowSample(
            x_hist=x[s:s + history_steps].copy(),
            p_hist=wind[s:s + history_steps].copy(),
            x_future=x[s + history_steps:s + total].copy(),
            start_time=series.time_at(s),
            start_index=s,
        ))
    return windows


def split_counts(n: int, ratio: tuple = (7, 1, 2)) -> tuple[int, int, int]:
    """Partition sizes: floor for train and val, remainder to test."""
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ConfigurationError(f"ratio must be three positive parts, got {ratio}")
    if all(float(r).is_integer() for r in ratio):
        # exact floor for integer ratios like 7:1:2
        total = int(sum(ratio))
        n_train = (n * int(ratio[0])) // total
        n_val = (n * int(ratio[1])) // total
    else:
        total = float(sum(ratio))
        n_train = int(n * ratio[0] / total)
        n_val = int(n * ratio[1] / total)
    n_test = n - n_train - n_val
    if n_train == 0 or n_val == 0 or n_test == 0:
        raise ConfigurationError(
            f"split {ratio} of {n} windows leaves an empty partition "
            f"({n_train}/{n_val}/{n_test})")
    return n_train, n_val, n_test


def chronological_split(windows: list[WindowSample],
                        ratio: tuple = (7, 1, 2)) -> DatasetSplit:
    """Split window starts chronologically and normalize from train stats.

    floor(train_frac * n) windows go to train, floor(val_frac * n) to val,
    the remainder to test. PM2.5 mean/std come from the train windows only;
    all three partitions are returned in normalized units.
    """
    n = len(windows)
    n_train, n_val, _ = split_counts(n, ratio)
    ordered = sorted(windows, key=lambda w: w.start_index)
    train = ordered[:n_train]
    val = ordered[n_train:n_train + n_val]
    test = ordered[n_train + n_val:]
    values = np.concatenate([np.concatenate([w.x_hist.ravel(), w.x_future.ravel()])
                             for w in train])
    stats = NormStats(mean=float(values.mean()), std=float(values.std()))

    def norm(part):
        return [replace(w, x_hist=stats.normalize(w.x_hist),
                        x_future=stats.normalize(w.x_future)) for w in part]

    return DatasetSplit(train=norm(train), val=norm(val), test=norm(test),
                        stats=stats, ratio=tuple(ratio))


DATASET_FORMAT = "aircast-dataset-v1"


@dataclass
class Dataset:
    """Processed series, station geometry, and the graph distance cutoff."""

    series: Series3h
    stations: list
    max_distance_km: float | None = None

    def __post_init__(self):
        if [s.station_id for s in self.stations] != list(self.series.station_ids):
            raise ConfigurationError("station table does not match series columns")


def save_dataset(dataset: Dataset, path) -> None:
    """Persist a processed dataset as one .npz file with JSON metadata."""
    series = dataset.series
    meta = {
        "format": DATASET_FORMAT,
        "start_epoch": int((series.start - EPOCH).total_seconds()),
        "station_ids": list(series.station_ids),
        "latitudes": [s.latitude for s in dataset.stations],
        "longitudes": [s.longitude for s in dataset.stations],
        "max_distance_km": dataset.max_distance_km,
    }
    with open(path, "wb") as fh:
        np.savez(fh, _meta=np.array(json.dumps(meta)),
                 pm25=series.pm25, wind_u=series.wind_u, wind_v=series.wind_v)


def load_dataset(path) -> Dataset:
    try:
        archive = np.load(path, allow_pickle=False)
    except (zipfile.BadZipFile, OSError, ValueError) as e:
        raise FormatError(f"{path}: not a readable container ({e})") from None
    with archive:
        if "_meta" not in archive:
            raise FormatError(f"{path}: missing metadata entry")
        try:
            meta = json.loads(str(archive["_meta"]))
        except json.JSONDecodeError:
            raise FormatError(f"{path}: corrupt metadata") from None
        if meta.get("format") != DATASET_FORMAT:
            raise FormatError(f"{path}: unsupported format {meta.get('format')!r}")
        try:
            pm25 = archive["pm25"]
            wind_u = archive["wind_u"]
            wind_v = archive["wind_v"]
        except KeyError as e:
            raise FormatError(f"{path}: missing array {e}") from None
    stations = [Station(sid, lat, lon) for sid, lat, lon
                in zip(meta["station_ids"], meta["latitudes"], meta["longitudes"])]
    series = Series3h(start=EPOCH + timedelta(seconds=meta["start_epoch"]),
                      station_ids=list(meta["station_ids"]),
                      pm25=pm25, wind_u=wind_u, wind_v=wind_v)
    return Dataset(series, stations, meta.get("max_distance_km"))
