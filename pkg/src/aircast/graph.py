"""Sensor geometry: stations, inverse-distance adjacency, scaled Laplacians."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (ContractError, DataError, DegenerateGraphError,
                     DimensionError, NumericError, ParseError)

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class Station:
    station_id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise ContractError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise ContractError(f"longitude {self.longitude} outside [-180, 180]")


def haversine_km(a: Station, b: Station) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km."""
    la1, lo1, la2, lo2 = map(math.radians,
                             (a.latitude, a.longitude, b.latitude, b.longitude))
    s = (math.sin((la2 - la1) / 2.0) ** 2
         + math.cos(la1) * math.cos(la2) * math.sin((lo2 - lo1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def distance_adjacency(stations: list[Station],
                       max_distance_km: float | None = None) -> np.ndarray:
    """Inverse-distance weights w_ij = 1 / d_ij, zero diagonal.

    The graph is complete unless max_distance_km is given, in which case
    entries for pairs farther apart than the cutoff are zeroed. Coincident
    stations have no finite weight and are rejected.
    """
    n = len(stations)
    if n == 0:
        raise DataError("no stations")
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = haversine_km(stations[i], stations[j])
            if d == 0.0:
                raise DegenerateGraphError(
                    f"stations {stations[i].station_id!r} and "
                    f"{stations[j].station_id!r} share coordinates")
            if max_distance_km is not None and d > max_distance_km:
                continue
            w[i, j] = w[j, i] = 1.0 / d
    return w


@dataclass(frozen=True)
class SensorGraph:
    """Stations plus their inverse-distance adjacency."""

    stations: tuple
    weights: np.ndarray

    def __post_init__(self):
        n = len(self.stations)
        if self.weights.shape != (n, n):
            raise DimensionError(
                f"adjacency {self.weights.shape} does not match {n} stations")
        if np.diag(self.weights).any():
            raise ContractError("adjacency diagonal must be zero")

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def station_ids(self) -> list[str]:
        return [s.station_id for s in self.stations]

    @classmethod
    def from_stations(cls, stations: list[Station],
                      max_distance_km: float | None = None) -> "SensorGraph":
        ids = [s.station_id for s in stations]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate station ids: {dup}")
        return cls(tuple(stations), distance_adjacency(stations, max_distance_km))


def load_stations(path) -> list[Station]:
    """Read a station table CSV with header station_id,latitude,longitude."""
    stations = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != \
                ["station_id", "latitude", "longitude"]:
            raise ParseError(f"{path}: expected header station_id,latitude,longitude")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            sid = row[0].strip()
            if not sid:
                raise ParseError(f"{path}:{lineno}: empty station_id")
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate station id {sid!r}")
            seen.add(sid)
            try:
                lat, lon = float(row[1]), float(row[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric coordinate") from None
            stations.append(Station(sid, lat, lon))
    if not stations:
        raise DataError(f"{path}: no stations")
    return stations


def power_iteration_lambda_max(m: np.ndarray, tol: float = 1e-9,
                               max_iter: int = 10_000) -> float:
    """Algebraically largest eigenvalue of a symmetric matrix.

    Power iteration on the Gershgorin-shifted matrix m + c*I (positive
    semidefinite, so its dominant eigenvalue is lambda_max(m) + c). The
    all-ones start can be exactly orthogonal to the dominant eigenvector
    (equal-weight two-node graphs), so a second fixed start with staggered
    entries is also iterated and the larger Rayleigh estimate wins.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected square matrix, got {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ContractError("matrix is not symmetric")
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    shift = float(np.abs(m).sum(axis=1).max())
    shifted = m + shift * np.eye(n)

    def run(v):
        # max-norm normalization lets the iterate settle on an exactly
        # representable eigenvector (entries like +-1), at which point the
        # Rayleigh quotient is computed without rounding; needed for the
        # hand cases that must come out bitwise exact
        v = v / np.max(np.abs(v))
        for _ in range(max_iter):
            av = shifted @ v
            nv = float(np.max(np.abs(av)))
            lam = float(v @ av) / float(v @ v)
            if nv == 0.0:
                return lam - shift
            nxt = av / nv
            if (nxt == v).all() or np.linalg.norm(av - lam * v) <= \
                    tol * max(1.0, abs(lam)) * np.linalg.norm(v):
                return lam - shift
            v = nxt
        raise NumericError(f"power iteration did not converge in {max_iter} steps")

    starts = [np.ones(n), np.sin(np.arange(1, n + 1, dtype=np.float64))]
    return max(run(v) for v in starts)


@dataclass(frozen=True)
class ScaledLaplacian:
    """Rescaled normalized Laplacian with its lambda_max and source tag."""

    matrix: np.ndarray
    lambda_max: float
    source: str  # "distance" or "flow_field"

    def __post_init__(self):
        if self.source not in ("distance", "flow_field"):
            raise ContractError(f"unknown laplacian source {self.source!r}")
        if self.lambda_max <= 0:
            raise ContractError("lambda_max must be positive")


def normalized_laplacian(w: np.ndarray) -> np.ndarray:
    """I - D^(-1/2) W D^(-1/2) with D_ii = sum_j |w_ij|.

    Rows (and matching columns) with zero degree contribute nothing to the
    normalized term, so such a row of the result is an identity row.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"expected square adjacency, got {w.shape}")
    if np.diag(w).any():
        raise ContractError("adjacency diagonal must be zero")
    deg = np.abs(w).sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    # 1/sqrt keeps the result bitwise invariant under power-of-two rescaling
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    return np.eye(w.shape[0]) - inv_sqrt[:, None] * w * inv_sqrt[None, :]


def scaled_laplacian(w: np.ndarray, source: str = "distance") -> ScaledLaplacian:
    """L = 2*Lbar/lambda_max - I for Lbar = I - D^(-1/2) W D^(-1/2).

    lambda_max comes from power iteration on Lbar for the symmetric distance
    graph; the antisymmetric flow-field variant fixes lambda_max = 2, the
    upper bound for normalized Laplacians.
    """
    lbar = normalized_laplacian(w)
    if source == "distance":
        lam = power_iteration_lambda_max(lbar)
        if lam <= 0:
            raise NumericError(f"non-positive lambda_max {lam}")
    elif source == "flow_field":
        lam = 2.0
    else:
        raise ContractError(f"unknown laplacian source {source!r}")
    matrix = 2.0 * lbar / lam - np.eye(w.shape[0])
    return ScaledLaplacian(matrix=matrix, lambda_max=lam, source=source)
