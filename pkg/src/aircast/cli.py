"""Command line surface: ingest, train, predict, evaluate, baseline,
simulate, plot.

Exit codes: 0 success, 1 usage error, 2 data or numeric error. The
config file is INI-style with [model], [train], and [solver] sections;
every field has a default, so all sections and the file itself are
optional. The environment variable AQC_SEED overrides both seeds.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from collections import defaultdict
from dataclasses import fields as dc_fields, replace
from datetime import timedelta
from pathlib import Path

import numpy as np

from .baselines import fit_var, ha_forecast, var_forecast
from .data import (Dataset, chronological_split, impute_missing,
                   load_dataset, make_windows, parse_readings, resample_3h,
                   save_dataset, split_counts, _parse_timestamp)
from .errors import (AircastError, ConfigurationError, DataError, ParseError,
                     UnknownStationError)
from .figures import render_diffusion_lines, render_wind_heatmap
from .graph import SensorGraph, load_stations
from .metrics import HORIZON_STEPS, SuddenChangeSpec, mae, rmse
from .model import (Model, ModelConfig, load_checkpoint, model_from_checkpoint,
                    save_checkpoint)
from .odeint import SolverConfig
from .physics import simulate_advection_reference, simulate_diffusion_reference
from .training import TrainConfig, train_loop

SEED_ENV = "AQC_SEED"
DEFAULT_SPLIT = (7, 1, 2)
SPARSE_SPLIT = (3, 1, 6)
CONFIG_SECTIONS = {"model": ModelConfig, "train": TrainConfig,
                   "solver": SolverConfig}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this surface reserves 2 for data
    problems, so usage failures exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _section_kwargs(cp: configparser.ConfigParser, name: str, cls) -> dict:
    if not cp.has_section(name):
        return {}
    defaults = {f.name: f.default for f in dc_fields(cls)}
    out = {}
    for key, raw in cp.items(name):
        if key not in defaults:
            raise ConfigurationError(f"unknown key {key!r} in [{name}]")
        default = defaults[key]
        try:
            if isinstance(default, bool):
                out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            elif isinstance(default, tuple):
                parts = raw.replace(",", " ").split()
                out[key] = tuple(int(p) for p in parts)
            else:
                out[key] = raw.strip()
        except ValueError:
            raise ConfigurationError(
                f"bad value for {key!r} in [{name}]: {raw!r}") from None
    return out


def load_config(path=None) -> tuple[ModelConfig, TrainConfig, SolverConfig]:
    """Read the optional INI config; AQC_SEED overrides both seeds."""
    kwargs = {name: {} for name in CONFIG_SECTIONS}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            loaded = cp.read(path)
        except configparser.Error as e:
            raise ConfigurationError(f"{path}: {e}") from None
        if not loaded:
            raise ConfigurationError(f"cannot read config file {path}")
        for section in cp.sections():
            if section not in CONFIG_SECTIONS:
                raise ConfigurationError(f"unknown config section [{section}]")
        for name, cls in CONFIG_SECTIONS.items():
            kwargs[name] = _section_kwargs(cp, name, cls)
    seed_env = os.environ.get(SEED_ENV)
    if seed_env is not None:
        try:
            seed = int(seed_env)
        except ValueError:
            raise ConfigurationError(
                f"{SEED_ENV} must be an integer, got {seed_env!r}") from None
        kwargs["model"]["seed"] = seed
        kwargs["train"]["seed"] = seed
    return (ModelConfig(**kwargs["model"]), TrainConfig(**kwargs["train"]),
            SolverConfig(**kwargs["solver"]))


def _read_field_csv(path, station_ids) -> np.ndarray:
    """CSV with header station_id,value covering every station exactly once."""
    values = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["station_id", "value"]:
            raise ParseError(f"{path}: expected header station_id,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields")
            sid = row[0].strip()
            if sid not in station_ids:
                raise UnknownStationError(f"{path}:{lineno}: unknown station {sid!r}")
            if sid in values:
                raise ParseError(f"{path}:{lineno}: duplicate station {sid!r}")
            try:
                values[sid] = float(row[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad value {row[1]!r}") from None
    missing = [sid for sid in station_ids if sid not in values]
    if missing:
        raise DataError(f"{path}: missing stations {missing}")
    return np.array([values[sid] for sid in station_ids])


def _read_wind_csv(path, station_ids) -> np.ndarray:
    """CSV with header station_id,u,v covering every station exactly once."""
    values = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["station_id", "u", "v"]:
            raise ParseError(f"{path}: expected header station_id,u,v")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields")
            sid = row[0].strip()
            if sid not in station_ids:
                raise UnknownStationError(f"{path}:{lineno}: unknown station {sid!r}")
            if sid in values:
                raise ParseError(f"{path}:{lineno}: duplicate station {sid!r}")
            try:
                values[sid] = (float(row[1]), float(row[2]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad wind row") from None
    missing = [sid for sid in station_ids if sid not in values]
    if missing:
        raise DataError(f"{path}: missing stations {missing}")
    return np.array([values[sid] for sid in station_ids])


def _read_forecast_csv(path) -> dict:
    """Forecast or truth CSV keyed by (timestamp, station_id).

    Header must be timestamp,station_id,<value column>; the value column
    is commonly pm25_pred for forecasts and pm25 for ground truth.
    """
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) != 3
                or [h.strip() for h in header[:2]] != ["timestamp", "station_id"]):
            raise ParseError(
                f"{path}: expected header timestamp,station_id,<value>")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields")
            where = f"{path}:{lineno}"
            ts = _parse_timestamp(row[0].strip(), where)
            sid = row[1].strip()
            key = (ts, sid)
            if key in out:
                raise ParseError(f"{where}: duplicate point {sid} at {row[0]}")
            try:
                out[key] = float(row[2])
            except ValueError:
                raise ParseError(f"{where}: bad value {row[2]!r}") from None
    if not out:
        raise DataError(f"{path}: no rows")
    return out


def _write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _forecast_rows(window, station_ids, values, history_steps, horizon) -> list:
    """CSV rows for the first ``horizon`` steps of one forecast window."""
    rows = []
    for step in range(horizon):
        ts = window.start_time + timedelta(hours=3 * (history_steps + step))
        stamp = ts.isoformat()
        for j, sid in enumerate(station_ids):
            rows.append([stamp, sid, repr(float(values[step, j]))])
    return rows


def cmd_ingest(args) -> int:
    stations = load_stations(args.stations)
    hourly = parse_readings(args.readings, [s.station_id for s in stations])
    series = resample_3h(impute_missing(hourly))
    save_dataset(Dataset(series, stations, args.max_distance_km), args.out)
    print(f"wrote {args.out}: {series.steps} three-hour steps, "
          f"{len(stations)} stations")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg, solver_cfg = load_config(args.config)
    dataset = load_dataset(args.data)
    graph = SensorGraph.from_stations(list(dataset.stations),
                                      dataset.max_distance_km)
    windows = make_windows(dataset.series, model_cfg.history_steps,
                           model_cfg.horizon_steps)
    ratio = SPARSE_SPLIT if args.sparse_split else DEFAULT_SPLIT
    split = chronological_split(windows, ratio)
    model = Model(graph, model_cfg, stats=split.stats, solver=solver_cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "training_log.csv"
    ckpt, rows = train_loop(model, split, train_cfg, log_path=log_path)
    ckpt_path = out_dir / "checkpoint.npz"
    save_checkpoint(ckpt, ckpt_path)
    best = min(r["val_mae"] for r in rows)
    print(f"trained {len(rows)} epoch(s) on {len(split.train)} windows, "
          f"best val MAE {best:.6f} (normalized)")
    print(f"wrote {ckpt_path} and {log_path}")
    return 0


def _select_test_origins(windows, ratio, horizon_steps):
    """Non-overlapping forecast origins: every horizon-th test window."""
    n_train, n_val, _ = split_counts(len(windows), ratio)
    test = windows[n_train + n_val:]
    return test[::horizon_steps]


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    graph = SensorGraph.from_stations(list(dataset.stations),
                                      dataset.max_distance_km)
    model = model_from_checkpoint(ckpt, graph)
    cfg = ckpt.config
    horizon = HORIZON_STEPS[args.horizon]
    if horizon > cfg.horizon_steps:
        raise ConfigurationError(
            f"checkpoint predicts {cfg.horizon_steps} steps, "
            f"{args.horizon} needs {horizon}")
    windows = make_windows(dataset.series, cfg.history_steps, cfg.horizon_steps)
    ratio = ckpt.split_ratio or DEFAULT_SPLIT
    origins = _select_test_origins(windows, ratio, cfg.horizon_steps)
    stats = model.stats
    ids = [s.station_id for s in dataset.stations]
    pred_rows, truth_rows = [], []
    for w in origins:
        sample = replace(w, x_hist=stats.normalize(w.x_hist),
                         x_future=stats.normalize(w.x_future))
        forecast = model.forward_sample(sample)[:, :, 0]
        pred_rows.extend(_forecast_rows(w, ids, forecast, cfg.history_steps,
                                        horizon))
        truth_rows.extend(_forecast_rows(w, ids, w.x_future[:, :, 0],
                                         cfg.history_steps, horizon))
    _write_rows_csv(args.out, ["timestamp", "station_id", "pm25_pred"], pred_rows)
    print(f"wrote {args.out}: {len(pred_rows)} rows from {len(origins)} "
          f"forecast origins at horizon {args.horizon}")
    if args.truth_out:
        _write_rows_csv(args.truth_out, ["timestamp", "station_id", "pm25"],
                        truth_rows)
        print(f"wrote {args.truth_out}: aligned ground truth")
    return 0


def cmd_baseline(args) -> int:
    dataset = load_dataset(args.data)
    series = dataset.series.pm25
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        history, horizon = ckpt.config.history_steps, ckpt.config.horizon_steps
        ratio = ckpt.split_ratio or DEFAULT_SPLIT
    else:
        history, horizon = 24, 24
        ratio = DEFAULT_SPLIT
    if args.sparse_split:
        ratio = SPARSE_SPLIT
    windows = make_windows(dataset.series, history, horizon)
    origins = _select_test_origins(windows, ratio, horizon)
    ids = [s.station_id for s in dataset.stations]
    pred_rows, truth_rows = [], []
    for w in origins:
        start = w.start_index + history
        if args.method == "ha":
            forecast = ha_forecast(series, range(start, start + horizon))
        else:
            # fit only on data available at the forecast origin
            model = fit_var(series[:start], lags=3)
            forecast = var_forecast(model, series[start - 3:start], horizon)
        pred_rows.extend(_forecast_rows(w, ids, forecast, history, horizon))
        truth_rows.extend(_forecast_rows(w, ids, w.x_future[:, :, 0], history,
                                         horizon))
    _write_rows_csv(args.out, ["timestamp", "station_id", "pm25_pred"], pred_rows)
    print(f"wrote {args.out}: {args.method} baseline, {len(pred_rows)} rows "
          f"from {len(origins)} forecast origins")
    if args.truth_out:
        _write_rows_csv(args.truth_out, ["timestamp", "station_id", "pm25"],
                        truth_rows)
        print(f"wrote {args.truth_out}: aligned ground truth")
    return 0


def cmd_evaluate(args) -> int:
    pred = _read_forecast_csv(args.pred)
    truth = _read_forecast_csv(args.truth)
    keys = sorted(set(pred) & set(truth), key=lambda k: (k[0], k[1]))
    if not keys:
        raise DataError("prediction and truth share no (timestamp, station) points")
    p = np.array([pred[k] for k in keys])
    t = np.array([truth[k] for k in keys])
    print(f"mae={mae(p, t)!r} rmse={rmse(p, t)!r} points={len(keys)}")
    if args.sudden_change:
        spec = SuddenChangeSpec.for_city(args.city)
        by_station = defaultdict(list)
        for (ts, sid), v in truth.items():
            by_station[sid].append((ts, v))
        flagged = set()
        for sid, seq in by_station.items():
            seq.sort()
            for (ts, v), (ts2, v2) in zip(seq, seq[1:]):
                if (ts2 - ts == timedelta(hours=3) and v > spec.level
                        and abs(v2 - v) > spec.delta):
                    flagged.add((ts, sid))
        selected = [k for k in keys if k in flagged]
        if not selected:
            raise DataError("no sudden-change points in the evaluated set")
        ps = np.array([pred[k] for k in selected])
        ts_ = np.array([truth[k] for k in selected])
        print(f"sudden_change mae={mae(ps, ts_)!r} rmse={rmse(ps, ts_)!r} "
              f"points={len(selected)}")
    return 0


def cmd_simulate(args) -> int:
    stations = load_stations(args.graph)
    graph = SensorGraph.from_stations(stations)
    ids = [s.station_id for s in stations]
    x0 = _read_field_csv(args.x0, ids)
    if args.mode == "diffusion":
        final = simulate_diffusion_reference(graph.weights, x0, args.k, args.t)
    else:
        if args.velocities:
            velocities = _read_matrix_csv(args.velocities, len(ids))
        else:
            velocities = graph.weights
        final = simulate_advection_reference(velocities, x0, args.t)
    _write_rows_csv(args.out, ["station_id", "value"],
                    [[sid, repr(float(v))] for sid, v in zip(ids, final)])
    print(f"wrote {args.out}: {args.mode} state at t={args.t:g} "
          f"(mass {float(x0.sum())!r} -> {float(final.sum())!r})")
    return 0


def _read_matrix_csv(path, n) -> np.ndarray:
    """Headerless n-by-n numeric CSV."""
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from None
    if m.shape != (n, n):
        raise DataError(f"{path}: expected a {n}x{n} matrix, got {m.shape}")
    return m


def cmd_plot(args) -> int:
    stations = load_stations(args.stations)
    ids = [s.station_id for s in stations]
    field = _read_field_csv(args.field, ids)
    if args.type == "wind-heatmap":
        if not args.wind:
            raise ConfigurationError("wind-heatmap needs --wind")
        wind = _read_wind_csv(args.wind, ids)
        render_wind_heatmap(stations, field, wind, args.out)
    else:
        if not args.source:
            raise ConfigurationError("diffusion-lines needs --source")
        graph = SensorGraph.from_stations(stations)
        render_diffusion_lines(graph, field, args.source, args.k, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="aircast",
                     description="physics-guided PM2.5 forecasting")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="raw CSVs to a processed dataset")
    p.add_argument("--stations", required=True)
    p.add_argument("--readings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-distance-km", type=float, default=None,
                   help="drop graph edges longer than this (default: none)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a processed dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sparse-split", action="store_true",
                   help="use the 3:1:6 split instead of 7:1:2")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast the test partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", required=True, choices=sorted(HORIZON_STEPS))
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", default=None,
                   help="also write aligned ground truth to this CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a forecast CSV against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--sudden-change", action="store_true")
    p.add_argument("--city", choices=["beijing", "shenzhen"], default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="historical-average or VAR forecast")
    p.add_argument("--method", required=True, choices=["ha", "var"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="align windows and split with this checkpoint")
    p.add_argument("--sparse-split", action="store_true")
    p.add_argument("--truth-out", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", help="run a reference physics simulator")
    p.add_argument("--mode", required=True, choices=["diffusion", "advection"])
    p.add_argument("--graph", required=True, help="stations CSV")
    p.add_argument("--x0", required=True, help="station_id,value CSV")
    p.add_argument("--t", required=True, type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=float, default=0.1,
                   help="diffusion coefficient (diffusion mode)")
    p.add_argument("--velocities", default=None,
                   help="headerless NxN edge-velocity CSV (advection mode)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="render an SVG figure")
    p.add_argument("--type", required=True,
                   choices=["wind-heatmap", "diffusion-lines"])
    p.add_argument("--stations", required=True)
    p.add_argument("--field", required=True, help="station_id,value CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--wind", default=None, help="station_id,u,v CSV")
    p.add_argument("--source", default=None, help="source station id")
    p.add_argument("--k", type=float, default=0.1)
    p.set_defaults(func=cmd_plot)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        print("aircast: error: a command is required", file=sys.stderr)
        return 1
    if getattr(args, "sudden_change", False) and not args.city:
        parser.print_usage(sys.stderr)
        print("aircast: error: --sudden-change requires --city", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except AircastError as e:
        print(f"aircast: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"aircast: error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_dispatch())


if __name__ == "__main__":
    main()
