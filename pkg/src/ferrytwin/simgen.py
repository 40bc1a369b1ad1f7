"""Physics-inspired synthetic transit generator.

Produces per-minute voyage logs between two docks so the preprocessing,
forecasting and environment stages are runnable without proprietary data.
Dynamics are deliberately simple: quadratic thrust/drag speed law, cubic
shaft-speed fuel law, first-order heading lag, and current drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import (
    EARTH_RADIUS_M,
    KNOTS_TO_M_PER_MIN,
    GeoPoint,
    Trip,
    TransitRecord,
    angle_diff_deg,
    bearing_deg,
    haversine_m,
    trip_to_csv,
    wrap_angle_deg,
)

M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

# Default route: two docks roughly 20 km apart with a mid-channel waypoint.
DEFAULT_ROUTE = (
    GeoPoint(49.20, -123.55),
    GeoPoint(49.29, -123.50),
    GeoPoint(49.35, -123.40),
)

# Seasonal mean wind speed (m/s), indexed by season code 0..3.
SEASON_WIND_MU = (6.4, 5.0, 4.2, 5.6)

# Weather walks between adjacent severity codes; self-transition 0.95.
WEATHER_TRANSITION = np.array(
    [
        [0.95, 0.05, 0.00, 0.00],
        [0.025, 0.95, 0.025, 0.00],
        [0.00, 0.025, 0.95, 0.025],
        [0.00, 0.00, 0.05, 0.95],
    ]
)

OUTLIER_COLUMNS = ("sog", "fc", "shaft_speed", "current_speed", "water_depth")
MISSING_COLUMNS = (
    "lat", "lon", "sog", "fc", "shaft_speed", "heading",
    "wind_speed", "wind_dir", "current_speed", "current_dir", "water_depth",
)


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    route: tuple = DEFAULT_ROUTE
    dock_radius_m: float = 200.0
    harbor_zone_m: float = 1500.0   # speed-restricted radius around each dock
    harbor_shaft: float = 0.45
    sched_steps: int = 100
    max_rpm: float = 180.0
    k_m: float = 5.0       # inertia
    k_n: float = 12.5      # thrust gain (knots^2 at full shaft)
    k_d: float = 0.1       # drag gain
    k_w: float = 0.22      # wind drag gain
    k_h: float = 0.35      # heading lag rate (1/min)
    c0: float = 1.2        # idle fuel, L/min
    c1: float = 18.0       # fuel gain; fuel = c0 + c1 * n^3
    cruise_shaft: float = 0.8
    sog_noise: float = 0.06
    heading_noise: float = 0.4
    fc_noise: float = 0.15
    wind_noise: float = 0.42
    wind_dir_noise: float = 6.0
    current_amp: float = 0.45
    current_noise: float = 0.04
    current_axis_deg: float = 160.0
    depth_base: float = 80.0
    depth_tide: float = 2.5
    depth_noise: float = 0.3
    outlier_rate: float = 0.005
    missing_rate: float = 0.01
    long_gap_rate: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if len(self.route) < 2:
            raise SimError("route needs at least 2 points")
        for g in (self.k_m, self.k_n, self.k_d, self.k_w, self.c0, self.c1):
            if g <= 0:
                raise SimError("dynamics gains must be positive")
        for r in (self.outlier_rate, self.missing_rate):
            if not 0.0 <= r < 1.0:
                raise SimError("rates must lie in [0, 1)")

    def to_jsonable(self) -> dict:
        d = asdict(self)
        d["route"] = [[p.lat, p.lon] for p in self.route]
        return d


@dataclass
class VesselState:
    pos: GeoPoint
    sog: float          # knots
    heading: float      # degrees [0, 360)
    shaft_n: float      # normalized shaft setting [0, 1]
    fc: float           # fuel rate, L/min


@dataclass
class DisturbanceSeries:
    """Columnar exogenous conditions for one trip (index = minute)."""

    wind_speed: np.ndarray
    wind_dir: np.ndarray
    current_speed: np.ndarray
    current_dir: np.ndarray
    water_depth: np.ndarray
    weather: np.ndarray
    minute_of_day: np.ndarray
    weekday: np.ndarray
    season: int

    def __len__(self) -> int:
        return len(self.wind_speed)


def weather_stationary_distribution() -> np.ndarray:
    """Stationary distribution of the weather chain via power iteration."""
    p = np.full(4, 0.25)
    for _ in range(20_000):
        p = p @ WEATHER_TRANSITION
    return p / p.sum()


def gen_disturbances(config: SimConfig, T: int, seed: int, *,
                     season: int = 0, weekday: int = 0, start_hour: float = 8.0,
                     tide_phase: float = 0.0) -> DisturbanceSeries:
    """Generate T minutes of exogenous conditions, deterministic per seed.

    Wind follows a mean-reverting walk (reversion 0.1/min) around a
    season/weather dependent mean; current follows a 12.4 h tidal sinusoid;
    weather is a 4-state Markov chain with 0.95 self-transition.
    """
    if T < 1:
        raise SimError("T must be >= 1")
    rng = np.random.default_rng(seed)

    weather = np.empty(T, dtype=np.int64)
    weather[0] = rng.integers(0, 4)
    cum = np.cumsum(WEATHER_TRANSITION, axis=1)
    u = rng.random(T)
    for t in range(1, T):
        weather[t] = np.searchsorted(cum[weather[t - 1]], u[t])

    # Weather severity scales the gustiness, not the mean, so that zero
    # noise collapses the walk exactly onto the seasonal mean.
    wind = np.empty(T)
    wind_dir = np.empty(T)
    mu = SEASON_WIND_MU[season]
    gust = config.wind_noise * (0.7 + 0.15 * weather)
    wind[0] = max(0.0, mu + gust[0] * rng.standard_normal())
    wind_dir[0] = rng.uniform(0.0, 360.0)
    eps_w = rng.standard_normal(T)
    eps_d = rng.standard_normal(T)
    for t in range(1, T):
        wind[t] = max(0.0, wind[t - 1] + 0.1 * (mu - wind[t - 1]) + gust[t] * eps_w[t])
        wind_dir[t] = wrap_angle_deg(wind_dir[t - 1] + config.wind_dir_noise * eps_d[t])

    minutes = np.arange(T, dtype=np.float64)
    tide = np.sin(2.0 * math.pi * (minutes + tide_phase) / 744.0)  # 12.4 h period
    signed = config.current_amp * tide + config.current_noise * rng.standard_normal(T)
    current_speed = np.abs(signed)
    current_dir = np.where(signed >= 0.0, config.current_axis_deg,
                           wrap_angle_deg(config.current_axis_deg + 180.0))

    depth = config.depth_base + config.depth_tide * tide + config.depth_noise * rng.standard_normal(T)
    depth = np.maximum(depth, 5.0)

    abs_minute = np.floor(start_hour * 60.0) + minutes
    minute_of_day = abs_minute % 1440.0
    weekday_arr = (weekday + (abs_minute // 1440.0).astype(np.int64)) % 7

    return DisturbanceSeries(
        wind_speed=wind, wind_dir=wind_dir,
        current_speed=current_speed, current_dir=current_dir,
        water_depth=depth, weather=weather,
        minute_of_day=minute_of_day, weekday=weekday_arr, season=season,
    )


def _disturbance_at(d: DisturbanceSeries, t: int) -> dict:
    i = min(t, len(d) - 1)
    return {
        "wind_speed": float(d.wind_speed[i]),
        "wind_dir": float(d.wind_dir[i]),
        "current_speed": float(d.current_speed[i]),
        "current_dir": float(d.current_dir[i]),
        "water_depth": float(d.water_depth[i]),
        "weather": int(d.weather[i]),
    }


def step_dynamics(s: VesselState, heading_cmd: float, shaft_cmd: float,
                  d: dict, config: SimConfig, dt: float = 1.0,
                  rng: np.random.Generator | None = None) -> VesselState:
    """Advance the vessel one time step.

    Speed follows thrust minus quadratic drag minus wind drag; heading
    relaxes toward the command with a rate limit; position integrates speed
    along heading plus current drift; fuel is an idle rate plus a cubic
    shaft-speed term.
    """
    if dt <= 0:
        raise SimError("dt must be positive")
    vals = (s.pos.lat, s.pos.lon, s.sog, s.heading, heading_cmd, shaft_cmd)
    if not all(math.isfinite(v) for v in vals):
        raise SimError("non-finite input to step_dynamics")

    def noise(scale: float) -> float:
        return scale * rng.standard_normal() if rng is not None else 0.0

    n = min(max(shaft_cmd, 0.0), 1.0)
    headwind = d["wind_speed"] * math.cos(math.radians(d["wind_dir"] - s.heading))
    accel = (config.k_n * n * n - config.k_d * s.sog * abs(s.sog) - config.k_w * headwind) / config.k_m
    sog = max(0.0, s.sog + dt * (accel + noise(config.sog_noise)))

    diff = angle_diff_deg(heading_cmd, s.heading)
    delta = max(-20.0 * dt, min(20.0 * dt, config.k_h * dt * diff))
    heading = wrap_angle_deg(s.heading + delta + noise(config.heading_noise))

    hd = math.radians(s.heading)
    v_north = s.sog * KNOTS_TO_M_PER_MIN * math.cos(hd)
    v_east = s.sog * KNOTS_TO_M_PER_MIN * math.sin(hd)
    cd = math.radians(d["current_dir"])
    v_north += d["current_speed"] * 60.0 * math.cos(cd)
    v_east += d["current_speed"] * 60.0 * math.sin(cd)
    lat = s.pos.lat + dt * v_north / M_PER_DEG_LAT
    lon = s.pos.lon + dt * v_east / (M_PER_DEG_LAT * math.cos(math.radians(s.pos.lat)))

    fc = config.c0 + config.c1 * n ** 3 + noise(config.fc_noise)
    fc = max(fc, config.c0 * 0.98)

    return VesselState(pos=GeoPoint(lat, lon), sog=sog, heading=heading, shaft_n=n, fc=fc)


@dataclass(frozen=True)
class CaptainAction:
    heading: float
    shaft: float
    mode: int


def captain_policy(s: VesselState, route: tuple, wp_index: int, elapsed: int,
                   config: SimConfig, *, shaft_comp: float = 0.0) -> tuple:
    """Scripted behavior policy: steer at the active waypoint, ramp the
    shaft up to cruise, slow down on approach, idle inside the dock radius.

    ``shaft_comp`` is a small additive schedule-keeping adjustment.
    Returns (action, next_wp_index).
    """
    dest = route[-1]
    here = s.pos
    dist_dest = haversine_m(here, dest)

    while wp_index < len(route) - 1 and haversine_m(here, route[wp_index]) < 700.0:
        wp_index += 1
    target = route[wp_index]
    heading_cmd = bearing_deg(here, target)

    dist_origin = haversine_m(here, route[0])
    in_dock = dist_dest <= config.dock_radius_m or dist_origin <= config.dock_radius_m
    cruise_eff = min(0.95, config.cruise_shaft + shaft_comp)
    if dist_dest <= config.dock_radius_m:
        shaft_target = 0.05
    else:
        # Approach: aim to cover the remaining distance in ~4.5 minutes at
        # the equilibrium speed implied by the shaft setting; this reduces
        # to the cruise setting when far out.
        eq_kn_per_n = math.sqrt(config.k_n / config.k_d)
        approach_kn = dist_dest / (4.5 * KNOTS_TO_M_PER_MIN)
        shaft_target = min(cruise_eff, max(0.17, approach_kn / eq_kn_per_n))
        if min(dist_dest, dist_origin) <= config.harbor_zone_m:
            shaft_target = min(shaft_target, config.harbor_shaft)

    ramp = 0.12
    shaft = min(max(shaft_target, s.shaft_n - ramp), s.shaft_n + ramp)
    shaft = min(max(shaft, 0.0), 1.0)

    mode = 2 if in_dock else 1
    return CaptainAction(heading=heading_cmd, shaft=shaft, mode=mode), wp_index


def _shaft_compensation(dist_remaining_m: float, elapsed: int, config: SimConfig) -> float:
    """Small additive throttle adjustment: push when the remaining schedule
    is tight for the remaining distance, ease off when well ahead. Bounded
    so the configured cruise setting stays the dominant fuel driver."""
    remaining = max(config.sched_steps - elapsed, 1)
    required_kn = dist_remaining_m / remaining / KNOTS_TO_M_PER_MIN
    cruise_kn = math.sqrt(config.k_n / config.k_d) * config.cruise_shaft
    gap_kn = required_kn + 0.5 - cruise_kn
    return min(max(0.06 * gap_kn, -0.04), 0.15)


def simulate_trip(config: SimConfig, direction: int, seed: int) -> Trip:
    """Run one full crossing under the captain policy."""
    rng = np.random.default_rng(seed)
    season = int(rng.integers(0, 4))
    weekday = int(rng.integers(0, 7))
    start_hour = float(rng.uniform(5.0, 22.0))
    tide_phase = float(rng.uniform(0.0, 744.0))

    route = tuple(config.route) if direction == 0 else tuple(reversed(config.route))
    max_steps = int(math.ceil(1.5 * config.sched_steps))
    dist = gen_disturbances(config, max_steps + 1, int(rng.integers(0, 2**31 - 1)),
                            season=season, weekday=weekday, start_hour=start_hour,
                            tide_phase=tide_phase)

    start = route[0]
    jitter = 25.0 / M_PER_DEG_LAT
    pos = GeoPoint(start.lat + rng.uniform(-jitter, jitter),
                   start.lon + rng.uniform(-jitter, jitter))
    state = VesselState(pos=pos, sog=0.0, heading=bearing_deg(pos, route[1]),
                        shaft_n=0.0, fc=config.c0)
    wp_index = 1
    records: list[TransitRecord] = []
    dest = route[-1]

    # Loading dwell at the departure dock before getting underway.
    dwell = int(rng.integers(8, 15))
    for t in range(dwell):
        d = _disturbance_at(dist, t)
        records.append(TransitRecord(
            t=t,
            lat=state.pos.lat + rng.normal(0.0, 2.0) / M_PER_DEG_LAT,
            lon=state.pos.lon + rng.normal(0.0, 2.0) / M_PER_DEG_LAT,
            sog=abs(rng.normal(0.0, 0.04)),
            fc=config.c0 + abs(rng.normal(0.0, 0.05)),
            shaft_speed=0.04 * config.max_rpm,
            heading=wrap_angle_deg(state.heading + rng.normal(0.0, 1.5)),
            cmd_heading=state.heading, cmd_shaft=0.04, cmd_mode=2,
            wind_speed=d["wind_speed"], wind_dir=d["wind_dir"],
            current_speed=d["current_speed"], current_dir=d["current_dir"],
            water_depth=d["water_depth"], weather=d["weather"],
        ))
    state.shaft_n = 0.04

    for t in range(dwell, max_steps + 1):
        d = _disturbance_at(dist, t)
        dist_dest = haversine_m(state.pos, dest)
        comp = _shaft_compensation(dist_dest, t, config)
        action, wp_index = captain_policy(state, route, wp_index, t, config, shaft_comp=comp)
        records.append(TransitRecord(
            t=t,
            lat=state.pos.lat, lon=state.pos.lon,
            sog=state.sog, fc=state.fc,
            shaft_speed=state.shaft_n * config.max_rpm,
            heading=state.heading,
            cmd_heading=action.heading, cmd_shaft=action.shaft, cmd_mode=action.mode,
            wind_speed=d["wind_speed"], wind_dir=d["wind_dir"],
            current_speed=d["current_speed"], current_dir=d["current_dir"],
            water_depth=d["water_depth"], weather=d["weather"],
        ))
        if t > 4 and dist_dest <= config.dock_radius_m:
            arrived = True
            break
        if t == max_steps:
            arrived = False
            break
        state = step_dynamics(state, action.heading, action.shaft, d, config, rng=rng)

    return Trip(records=records, direction=direction, start_hour=start_hour,
                weekday=weekday, season=season, sched_steps=config.sched_steps,
                arrived=arrived)


def trip_arrived(trip: Trip, config: SimConfig) -> bool:
    """Arrival flag; falls back to the last valid GPS fix when the log
    source did not record one."""
    if trip.arrived is not None:
        return trip.arrived
    route = config.route if trip.direction == 0 else tuple(reversed(config.route))
    for rec in reversed(trip.records):
        if math.isfinite(rec.lat) and math.isfinite(rec.lon):
            return haversine_m(GeoPoint(rec.lat, rec.lon), route[-1]) <= config.dock_radius_m
    return False


def _inject_artifacts(trip: Trip, config: SimConfig, rng: np.random.Generator) -> dict:
    """Corrupt a trip in place: multiplicative outliers plus missing cells
    (isolated single-step gaps and occasional multi-step gaps).

    Returns injection counts for diagnostics.
    """
    n = len(trip.records)
    n_outliers = 0
    n_missing = 0
    if config.outlier_rate > 0.0:
        for r in trip.records:
            for col in OUTLIER_COLUMNS:
                if rng.random() < config.outlier_rate:
                    setattr(r, col, r.get(col) * rng.uniform(3.0, 10.0))
                    n_outliers += 1
    if config.missing_rate > 0.0:
        for r in trip.records:
            for col in MISSING_COLUMNS:
                if rng.random() < config.missing_rate:
                    r.missing.add(col)
        if rng.random() < config.long_gap_rate and n > 20:
            col = MISSING_COLUMNS[int(rng.integers(0, len(MISSING_COLUMNS)))]
            length = int(rng.integers(4, 9))
            start = int(rng.integers(5, n - length - 1))
            for r in trip.records[start:start + length]:
                r.missing.add(col)
        n_missing = sum(len(r.missing) for r in trip.records)
    for r in trip.records:
        for col in r.missing:
            setattr(r, col, math.nan)
    return {"outliers": n_outliers, "missing": n_missing,
            "outlier_cells": n * len(OUTLIER_COLUMNS)}


def generate_corpus(config: SimConfig, n_trips: int, *, return_stats: bool = False):
    """Generate n_trips alternating-direction voyages, deterministic per
    (config, seed); each trip draws from an independently derived stream."""
    if n_trips < 1:
        raise SimError("n_trips must be >= 1")
    seeds = np.random.SeedSequence(config.seed).spawn(n_trips)
    trips = []
    stats = {"outliers": 0, "missing": 0, "outlier_cells": 0}
    for i in range(n_trips):
        trip_rng = np.random.default_rng(seeds[i])
        sim_seed = int(trip_rng.integers(0, 2**31 - 1))
        trip = simulate_trip(config, direction=i % 2, seed=sim_seed)
        for k, v in _inject_artifacts(trip, config, trip_rng).items():
            stats[k] += v
        trips.append(trip)
    if return_stats:
        return trips, stats
    return trips


def write_corpus(trips: list, config: SimConfig, out_dir: Path) -> Path:
    """Write trips/trip_{i}.csv plus corpus.json and return the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "trips").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, trip in enumerate(trips):
        rel = f"trips/trip_{i:04d}.csv"
        trip_to_csv(trip, out_dir / rel)
        entries.append({
            "file": rel,
            "direction": trip.direction,
            "start_hour": trip.start_hour,
            "weekday": trip.weekday,
            "season": trip.season,
            "sched_steps": trip.sched_steps,
            "n_records": len(trip),
            "arrived": trip_arrived(trip, config),
        })
    manifest = {
        "schema": 1,
        "seed": config.seed,
        "n_trips": len(trips),
        "config": config.to_jsonable(),
        "trips": entries,
    }
    path = out_dir / "corpus.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_corpus(corpus_dir: Path) -> tuple:
    """Load (trips, config, manifest) from a corpus directory."""
    from .core import trip_from_csv

    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "corpus.json").read_text())
    cfg = dict(manifest["config"])
    cfg["route"] = tuple(GeoPoint(lat, lon) for lat, lon in cfg["route"])
    config = SimConfig(**cfg)
    trips = []
    for entry in manifest["trips"]:
        trip = trip_from_csv(
            corpus_dir / entry["file"],
            direction=entry["direction"], start_hour=entry["start_hour"],
            weekday=entry["weekday"], season=entry["season"],
            sched_steps=entry["sched_steps"],
        )
        trip.arrived = entry["arrived"]
        trips.append(trip)
    return trips, config, manifest
