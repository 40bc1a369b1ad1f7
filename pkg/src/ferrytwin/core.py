"""Shared domain types, geodesy, quantiles and evaluation metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

EARTH_RADIUS_M = 6_371_000.0
KNOTS_TO_M_PER_MIN = 1852.0 / 60.0

# Column order for per-minute trip CSV files. Empty cells mean "missing".
CSV_COLUMNS = (
    "t",
    "lat",
    "lon",
    "sog",
    "fc",
    "shaft_speed",
    "heading",
    "cmd_heading",
    "cmd_shaft",
    "cmd_mode",
    "wind_speed",
    "wind_dir",
    "current_speed",
    "current_dir",
    "water_depth",
    "weather",
)

# Sensor channels that may carry injected gaps/outliers; helm commands are
# exact log entries and are never flagged or imputed.
SENSOR_COLUMNS = (
    "lat",
    "lon",
    "sog",
    "fc",
    "shaft_speed",
    "heading",
    "wind_speed",
    "wind_dir",
    "current_speed",
    "current_dir",
    "water_depth",
    "weather",
)


class CoreError(ValueError):
    """Raised on contract violations in core operations."""


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise CoreError("GeoPoint coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise CoreError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise CoreError(f"longitude {self.lon} outside [-180, 180]")


@dataclass
class TransitRecord:
    """One per-minute sensor row plus the helm commands logged at that minute.

    Sensor fields describe the vessel/ambient state at minute ``t``;
    ``fc`` and ``shaft_speed`` are averaged over the minute ending at ``t``.
    ``cmd_*`` fields are the captain's orders applied over [t, t+1).
    Missing sensor values carry ``nan`` and are listed in ``missing``.
    """

    t: int
    lat: float
    lon: float
    sog: float
    fc: float
    shaft_speed: float
    heading: float
    cmd_heading: float
    cmd_shaft: float
    cmd_mode: int
    wind_speed: float
    wind_dir: float
    current_speed: float
    current_dir: float
    water_depth: float
    weather: int
    missing: set = field(default_factory=set)

    def get(self, name: str) -> float:
        return getattr(self, name)

    @property
    def pos(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


@dataclass
class Trip:
    """An ordered voyage between the two docks with schedule metadata.

    ``arrived`` is ground truth from the log source: whether the vessel
    reached the destination dock (None when unknown).
    """

    records: list
    direction: int
    start_hour: float
    weekday: int
    season: int
    sched_steps: int
    arrived: bool | None = None

    def __post_init__(self):
        if not self.records:
            raise CoreError("trip must contain at least one record")
        ts = [r.t for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise CoreError("record minute indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def total_fc(self) -> float:
        """Sum of fuel-rate values over non-missing rows."""
        return float(sum(r.fc for r in self.records if "fc" not in r.missing and math.isfinite(r.fc)))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres on a spherical Earth."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile of an already sorted sequence.

    Interpolates between order statistics at fractional position q * (n - 1).
    """
    if len(values) == 0:
        raise CoreError("empty input")
    if not 0.0 <= q <= 1.0:
        raise CoreError(f"quantile fraction {q} outside [0, 1]")
    pos = q * (len(values) - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    if lo == hi:
        return float(values[lo])
    frac = pos - lo
    return float(values[lo] * (1.0 - frac) + values[hi] * frac)


@dataclass(frozen=True)
class Metrics:
    rmse: float
    std: float
    r2: float | None  # None when the truth series is constant


def metrics(pred: Sequence[float], truth: Sequence[float]) -> Metrics:
    """RMSE, population std of the error series, and R² of a prediction.

    R² is reported as ``None`` when the truth series is constant (SS_tot = 0).
    """
    if len(pred) != len(truth):
        raise CoreError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if len(pred) == 0:
        raise CoreError("empty input")
    n = len(pred)
    errors = [p - t for p, t in zip(pred, truth)]
    mse = sum(e * e for e in errors) / n
    mean_err = sum(errors) / n
    var_err = sum((e - mean_err) ** 2 for e in errors) / n
    mean_truth = sum(truth) / n
    ss_tot = sum((t - mean_truth) ** 2 for t in truth)
    if ss_tot == 0.0:
        r2 = None
    else:
        ss_res = sum(e * e for e in errors)
        r2 = 1.0 - ss_res / ss_tot
    return Metrics(rmse=math.sqrt(mse), std=math.sqrt(var_err), r2=r2)


def _fmt(x: float) -> str:
    return repr(float(x))


def trip_to_csv(trip: Trip, path: Path) -> None:
    """Write one trip as CSV in the documented column order.

    Missing sensor values are written as empty cells. A metadata comment row
    is not used; trip-level metadata lives in the corpus manifest.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in trip.records:
            row = []
            for col in CSV_COLUMNS:
                v = r.get(col)
                if col in r.missing:
                    row.append("")
                elif col in ("t", "cmd_mode", "weather"):
                    row.append(str(int(v)))
                else:
                    row.append(_fmt(v))
            writer.writerow(row)


def trip_from_csv(path: Path, *, direction: int, start_hour: float, weekday: int,
                  season: int, sched_steps: int) -> Trip:
    """Read a trip CSV written by :func:`trip_to_csv`."""
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise CoreError(f"unexpected CSV header in {path}")
        for row in reader:
            vals = {}
            missing = set()
            for col, cell in zip(CSV_COLUMNS, row):
                if cell == "":
                    missing.add(col)
                    vals[col] = math.nan
                elif col in ("t", "cmd_mode", "weather"):
                    vals[col] = int(cell)
                else:
                    vals[col] = float(cell)
            records.append(TransitRecord(missing=missing, **vals))
    return Trip(records=records, direction=direction, start_hour=start_hour,
                weekday=weekday, season=season, sched_steps=sched_steps)


def wrap_angle_deg(a: float) -> float:
    """Wrap an angle to [0, 360)."""
    return a % 360.0


def angle_diff_deg(a: float, b: float) -> float:
    """Signed smallest difference a - b, wrapped to [-180, 180)."""
    return (a - b + 180.0) % 360.0 - 180.0


def bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from a to b, compass degrees."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlmb = math.radians(b.lon - a.lon)
    y = math.sin(dlmb) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return wrap_angle_deg(math.degrees(math.atan2(y, x)))
