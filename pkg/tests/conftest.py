import numpy as np
import pytest

from ferrytwin.preprocess import (
    CleanTrip,
    ColumnStats,
    CONTINUOUS_COLUMNS,
    PipelineConfig,
    PipelineStats,
    engineer_frame,
)


def identity_stats(kept=()) -> PipelineStats:
    """Stats whose transform chain is the identity on [0, 1] columns."""
    cols = {name: ColumnStats(tmin=0.0, tmax=1.0) for name in CONTINUOUS_COLUMNS}
    return PipelineStats(
        columns=cols,
        cluster={"centroids": np.zeros((2, 3)), "mean": np.zeros(3),
                 "std": np.ones(3), "mode1_cluster": 0},
        kept=list(kept),
        pearson={},
        config=PipelineConfig(),
        split_seed=0,
    )


def toy_clean_trip(T=40, seed=0, index=0, direction=0, sched_steps=30) -> CleanTrip:
    """A smooth synthetic trip with every frame column in [0, 1] (positions
    use tiny degree offsets so haversine stays well-conditioned)."""
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    frame = {
        "sog": 0.5 + 0.3 * np.sin(t / 7.0) + 0.02 * rng.standard_normal(T),
        "fc": 0.4 + 0.2 * np.cos(t / 9.0) + 0.02 * rng.standard_normal(T),
        "lat": 0.3 + 0.004 * t / T + 0.0005 * rng.standard_normal(T),
        "lon": 0.6 - 0.004 * t / T + 0.0005 * rng.standard_normal(T),
        "shaft_speed": np.clip(0.5 + 0.1 * np.sin(t / 5.0), 0, 1),
        "heading": (30.0 + 2.0 * np.sin(t / 11.0)) % 360.0,
        "cmd_heading": (30.0 + 2.0 * np.sin(t / 11.0)) % 360.0,
        "cmd_shaft": np.clip(0.6 + 0.1 * np.cos(t / 6.0), 0, 1),
        "cmd_mode": np.ones(T),
        "wind_speed": np.clip(0.4 + 0.1 * np.sin(t / 13.0), 0, 1),
        "wind_dir": (120.0 + 5.0 * np.cos(t / 17.0)) % 360.0,
        "current_speed": np.clip(0.3 + 0.05 * np.sin(t / 19.0), 0, 1),
        "current_dir": np.full(T, 160.0),
        "water_depth": np.clip(0.7 + 0.02 * np.sin(t / 23.0), 0, 1),
        "weather": np.zeros(T),
        "minute_of_day": (480.0 + t) % 1440.0,
        "weekday": np.full(T, 2.0),
    }
    # identity stats still clip to [0, 1] when applied, so the fixture's
    # engineered columns must carry the same clip to stay consistent
    frame = engineer_frame(frame)
    for name in ("accel", "displacement", "rel_wind_sq", "heading_rate"):
        frame[name] = np.clip(frame[name], 0.0, 1.0)
    return CleanTrip(index=index, frame=frame, mode=np.ones(T, dtype=np.int64),
                     direction=direction, start_hour=8.0, weekday=2, season=1,
                     sched_steps=sched_steps, arrived=True, excluded=False)
