"""Sensor-log cleaning pipeline.

Stages, in order: IQR outlier flagging (fences fitted on the train split),
gap imputation, feature engineering (acceleration, displacement, relative
wind), operating-mode clustering, Pearson feature selection, power
transforms for skewed features, and min-max normalization to [0, 1].

A cleaned trip keeps its columns under the raw sensor names; continuous
columns hold normalized values, circular columns stay in degrees, and
categorical columns stay as integer codes. ``PipelineStats`` records every
fitted constant so the transform chain can be replayed on live data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import KNOTS_TO_M_PER_MIN, GeoPoint, Trip, angle_diff_deg, haversine_m, quantile

TARGET_COLUMNS = ("fc", "sog", "lat", "lon")

# Continuous sensor/engineered columns that go through the transform chain.
# Targets are min-max only; feature columns may additionally get a power
# transform when skewed.
CONTINUOUS_COLUMNS = (
    "fc", "sog", "lat", "lon", "shaft_speed", "wind_speed", "current_speed",
    "water_depth", "accel", "displacement", "rel_wind_sq", "heading_rate",
)
CIRCULAR_COLUMNS = ("heading", "cmd_heading", "wind_dir", "current_dir")
OUTLIER_CHECK_COLUMNS = ("sog", "fc", "shaft_speed", "current_speed", "water_depth")
IMPUTE_COLUMNS = (
    "lat", "lon", "sog", "fc", "shaft_speed", "heading",
    "wind_speed", "wind_dir", "current_speed", "current_dir", "water_depth", "weather",
)

# Candidate model covariates gated by the Pearson floor; everything in
# DEFAULT_KEEP_LIST is retained on domain grounds regardless of correlation.
PEARSON_CANDIDATES = ("accel", "displacement", "rel_wind_sq", "wind_speed",
                      "current_speed", "cmd_shaft")
DEFAULT_KEEP_LIST = ("cmd_heading", "cmd_mode", "start_hour", "direction",
                     "minute_of_day", "weekday", "season", "weather",
                     "wind_dir", "current_dir", "water_depth", "wind_cat")

WIND_CATEGORIES = ("head", "starboard", "tail", "port")


class PreprocessError(ValueError):
    pass


@dataclass
class PipelineConfig:
    max_gap: int = 3
    skew_threshold: float = 0.75
    # Skew-triggered power transforms apply to these columns only: ambient
    # sensor channels with unimodal skewed distributions. Kinematic columns
    # (sog, displacement, ...) are multimodal by operation and a power
    # transform cannot gaussianize them.
    power_columns: tuple = ("wind_speed", "current_speed", "water_depth", "rel_wind_sq")
    pearson_floor: float = 0.1
    mutual_r_cap: float = 0.95
    keep_list: tuple = DEFAULT_KEEP_LIST
    kmeans_restarts: int = 50
    mode_features: tuple = ("sog", "accel", "shaft_speed")
    pearson_mode_only: bool = True
    split_fractions: tuple = (0.70, 0.15, 0.15)
    split_seed: int = 1234


# ---------------------------------------------------------------------------
# outliers


def iqr_fences(values: np.ndarray) -> tuple:
    """(lower, upper) fences at 1.5 IQR from the quartiles."""
    finite = np.sort(values[np.isfinite(values)])
    if finite.size < 4:
        raise PreprocessError("need at least 4 values for IQR fences")
    q1 = quantile(finite, 0.25)
    q3 = quantile(finite, 0.75)
    iqr = q3 - q1
    return q1 - 1.5 * iqr, q3 + 1.5 * iqr, q1, q3


def flag_outliers_iqr(column: np.ndarray) -> np.ndarray:
    """Boolean mask of values outside the 1.5 IQR fences.

    Zero-IQR columns flag nothing; fewer than 4 finite values flags nothing
    (with a warning rather than an error).
    """
    column = np.asarray(column, dtype=np.float64)
    finite = np.isfinite(column)
    if finite.sum() < 4:
        import warnings

        warnings.warn("too few values for IQR fences; no outliers flagged")
        return np.zeros(column.shape, dtype=bool)
    lo, hi, q1, q3 = iqr_fences(column)
    if hi - lo <= 0 or q3 - q1 == 0:
        return np.zeros(column.shape, dtype=bool)
    return finite & ((column < lo) | (column > hi))


def apply_fences(column: np.ndarray, lo: float, hi: float, iqr_zero: bool) -> np.ndarray:
    if iqr_zero:
        return np.zeros(column.shape, dtype=bool)
    finite = np.isfinite(column)
    return finite & ((column < lo) | (column > hi))


# ---------------------------------------------------------------------------
# imputation


def _interp_gaps(values: np.ndarray, max_gap: int, circular: bool) -> tuple:
    """Fill interior gaps <= max_gap by linear interpolation and boundary
    gaps <= max_gap by the nearest valid value. Returns (filled, unresolved).
    """
    v = values.astype(np.float64).copy()
    valid = np.isfinite(v)
    n = len(v)
    unresolved = np.zeros(n, dtype=bool)
    if valid.all():
        return v, unresolved
    if not valid.any():
        return v, ~valid

    idx = np.flatnonzero(valid)
    work = v.copy()
    if circular:
        unwrapped = np.degrees(np.unwrap(np.radians(v[idx])))
        work[idx] = unwrapped

    # leading gap
    first, last = idx[0], idx[-1]
    if first > 0:
        if first <= max_gap:
            work[:first] = work[first]
        else:
            unresolved[:first] = True
    if last < n - 1:
        tail = n - 1 - last
        if tail <= max_gap:
            work[last + 1:] = work[last]
        else:
            unresolved[last + 1:] = True

    for a, b in zip(idx, idx[1:]):
        gap = b - a - 1
        if gap == 0:
            continue
        if gap <= max_gap:
            frac = np.arange(1, gap + 1) / (gap + 1)
            work[a + 1:b] = work[a] + frac * (work[b] - work[a])
        else:
            unresolved[a + 1:b] = True

    if circular:
        filled = np.where(unresolved, np.nan, work % 360.0)
    else:
        filled = np.where(unresolved, np.nan, work)
    return filled, unresolved


def _nearest_fill(values: np.ndarray) -> np.ndarray:
    """Nearest-valid fill with no gap limit (coarse fill for replay-only trips)."""
    v = values.astype(np.float64).copy()
    valid = np.isfinite(v)
    if not valid.any():
        return v
    idx = np.flatnonzero(valid)
    pos = np.arange(len(v))
    nearest = idx[np.argmin(np.abs(pos[:, None] - idx[None, :]), axis=1)]
    return v[nearest]


def impute_frame(frame: dict, max_gap: int = 3) -> tuple:
    """Impute every sensor column of one trip frame.

    Interior gaps <= max_gap are linearly interpolated, boundary gaps
    <= max_gap take the nearest valid value, and circular columns are
    interpolated after angle unwrapping. Longer gaps (or fully-missing
    columns) mark the trip excluded-from-training; those cells are then
    coarse-filled nearest-valid so the trip stays usable for replay.

    Returns (frame, unresolved_mask_by_column, excluded).
    """
    out = dict(frame)
    unresolved_by_col: dict = {}
    excluded = False
    for col in IMPUTE_COLUMNS:
        v = np.asarray(frame[col], dtype=np.float64)
        if not np.isfinite(v).any():
            excluded = True
            unresolved_by_col[col] = np.ones(len(v), dtype=bool)
            out[col] = np.zeros_like(v)
            continue
        filled, unresolved = _interp_gaps(v, max_gap, circular=col in CIRCULAR_COLUMNS)
        if col == "weather":
            # categorical: nearest-valid instead of interpolation
            filled = np.where(np.isfinite(v), v, np.rint(_nearest_fill(v)))
            filled = np.where(unresolved, np.nan, filled)
        if unresolved.any():
            excluded = True
            filled = np.where(unresolved, _nearest_fill(v), filled)
            if col == "weather":
                filled = np.rint(filled)
        out[col] = filled
        unresolved_by_col[col] = unresolved
    return out, unresolved_by_col, excluded


# ---------------------------------------------------------------------------
# engineered features


def wind_features(wind_speed: float, wind_dir: float, sog_kn: float, heading: float) -> tuple:
    """Squared relative wind speed and 4-sector direction category.

    The relative (apparent) wind is the true wind vector minus the vessel
    velocity vector; the category quantizes the apparent wind's bearing off
    the bow into head/starboard/tail/port sectors of 90 degrees.
    """
    to_dir = math.radians(wind_dir + 180.0)  # wind blows toward from-dir + 180
    wx = wind_speed * math.sin(to_dir)
    wy = wind_speed * math.cos(to_dir)
    v_ms = sog_kn * KNOTS_TO_M_PER_MIN / 60.0
    hd = math.radians(heading)
    vx = v_ms * math.sin(hd)
    vy = v_ms * math.cos(hd)
    rx, ry = wx - vx, wy - vy
    rel_sq = rx * rx + ry * ry
    if rel_sq < 1e-12:
        return 0.0, 0
    from_dir = math.degrees(math.atan2(-rx, -ry)) % 360.0
    rel_bearing = (from_dir - heading) % 360.0
    sector = int(((rel_bearing + 45.0) % 360.0) // 90.0)
    return rel_sq, sector


def engineer_frame(frame: dict) -> dict:
    """Add accel, displacement, relative-wind and heading-rate columns."""
    out = dict(frame)
    sog = frame["sog"]
    n = len(sog)
    accel = np.zeros(n)
    accel[1:] = sog[1:] - sog[:-1]
    out["accel"] = accel

    disp = np.zeros(n)
    for i in range(1, n):
        disp[i] = haversine_m(GeoPoint(frame["lat"][i - 1], frame["lon"][i - 1]),
                              GeoPoint(frame["lat"][i], frame["lon"][i]))
    out["displacement"] = disp

    rel = np.zeros(n)
    cat = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rel[i], cat[i] = wind_features(frame["wind_speed"][i], frame["wind_dir"][i],
                                       frame["sog"][i], frame["cmd_heading"][i])
    out["rel_wind_sq"] = rel
    out["wind_cat"] = cat

    rate = np.zeros(n)
    for i in range(1, n):
        rate[i] = angle_diff_deg(frame["cmd_heading"][i], frame["cmd_heading"][i - 1])
    out["heading_rate"] = rate
    return out


# ---------------------------------------------------------------------------
# operating-mode clustering


def _kmeans_once(x: np.ndarray, rng: np.random.Generator, max_iter: int = 200,
                 return_trace: bool = False):
    """One Lloyd run with k-means++ seeding, k = 2. Converges when the
    assignment stops changing."""
    n = len(x)
    first = int(rng.integers(n))
    d2 = np.sum((x - x[first]) ** 2, axis=1)
    total = d2.sum()
    if total <= 0:
        raise PreprocessError("cannot cluster")
    second = int(rng.choice(n, p=d2 / total))
    centroids = np.stack([x[first], x[second]]).astype(np.float64)

    labels = None
    trace = []
    for _it in range(max_iter):
        dists = np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2)
        new_labels = np.argmin(dists, axis=1)
        for k in range(2):
            if np.any(new_labels == k):
                centroids[k] = x[new_labels == k].mean(axis=0)
        trace.append(float(np.sum((x - centroids[new_labels]) ** 2)))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = trace[-1]
    if return_trace:
        return centroids, labels, inertia, trace
    return centroids, labels, inertia


def fit_modes(features: np.ndarray, sog: np.ndarray, restarts: int = 50,
              seed: int = 0) -> dict:
    """2-means over standardized features; the higher-mean-SOG cluster is
    operating mode 1 (cruise), the other mode 2 (docking)."""
    x = np.asarray(features, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if np.all(std == 0):
        raise PreprocessError("cannot cluster")
    std = np.where(std == 0, 1.0, std)
    z = (x - mean) / std

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centroids, labels, inertia = _kmeans_once(z, rng)
        if best is None or inertia < best[2]:
            best = (centroids, labels, inertia)
    centroids, labels, _ = best
    mean_sog = [sog[labels == k].mean() if np.any(labels == k) else -np.inf for k in range(2)]
    mode1 = int(np.argmax(mean_sog))
    return {"centroids": centroids, "mean": mean, "std": std, "mode1_cluster": mode1}


def assign_modes(model: dict, features: np.ndarray) -> np.ndarray:
    """Mode labels in {1, 2} for feature rows under a fitted cluster model."""
    z = (np.asarray(features, dtype=np.float64) - model["mean"]) / model["std"]
    dists = np.linalg.norm(z[:, None, :] - model["centroids"][None, :, :], axis=2)
    labels = np.argmin(dists, axis=1)
    return np.where(labels == model["mode1_cluster"], 1, 2).astype(np.int64)


# ---------------------------------------------------------------------------
# feature selection


def pearson_r(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation; None when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return None
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def select_features(columns: dict, targets: dict, keep_list: tuple = (),
                    floor: float = 0.1, mutual_cap: float = 0.95) -> tuple:
    """Drop weakly-correlated and redundant candidate features.

    Keeps a feature when its max |r| against any target reaches the floor or
    it appears in keep_list; drops constant columns; for pairs of kept
    features with mutual |r| above the cap, drops the later one in the
    given column order. Returns (kept_names, pearson_by_feature).
    """
    pearson: dict = {}
    kept = []
    for name, col in columns.items():
        rs = {t: pearson_r(col, tv) for t, tv in targets.items()}
        pearson[name] = rs
        if np.asarray(col).std() == 0:
            continue  # constant: dropped even if keep-listed
        finite = [abs(r) for r in rs.values() if r is not None]
        if name in keep_list or (finite and max(finite) >= floor):
            kept.append(name)

    final = []
    for i, name in enumerate(kept):
        redundant = False
        for prev in final:
            r = pearson_r(columns[prev], columns[name])
            if r is not None and abs(r) > mutual_cap:
                redundant = True
                break
        if not redundant:
            final.append(name)
    return final, pearson


# ---------------------------------------------------------------------------
# power transform + min-max


def yeo_johnson(x: np.ndarray, lam: float) -> np.ndarray:
    """Yeo-Johnson power transform, defined for any real input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    if abs(lam) > 1e-12:
        out[pos] = (np.power(x[pos] + 1.0, lam) - 1.0) / lam
    else:
        out[pos] = np.log1p(x[pos])
    if abs(lam - 2.0) > 1e-12:
        out[~pos] = -(np.power(1.0 - x[~pos], 2.0 - lam) - 1.0) / (2.0 - lam)
    else:
        out[~pos] = -np.log1p(-x[~pos])
    return out


def yeo_johnson_inverse(y: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form inverse of the power transform (sign-preserving)."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    pos = y >= 0
    if abs(lam) > 1e-12:
        out[pos] = np.power(np.maximum(lam * y[pos] + 1.0, 1e-300), 1.0 / lam) - 1.0
    else:
        out[pos] = np.expm1(y[pos])
    if abs(lam - 2.0) > 1e-12:
        out[~pos] = 1.0 - np.power(np.maximum(1.0 - (2.0 - lam) * y[~pos], 1e-300), 1.0 / (2.0 - lam))
    else:
        out[~pos] = 1.0 - np.exp(-y[~pos])
    return out


def yeo_johnson_loglik(x: np.ndarray, lam: float) -> float:
    """Gaussian log-likelihood of the transformed sample, including the
    transform's log-Jacobian term."""
    psi = yeo_johnson(x, lam)
    var = psi.var()
    if var <= 0:
        return -np.inf
    n = len(x)
    return float(-0.5 * n * np.log(var) + (lam - 1.0) * np.sum(np.sign(x) * np.log1p(np.abs(x))))


def fit_power_lambda(x: np.ndarray, grid_lo: float = -2.0, grid_hi: float = 2.0,
                     step: float = 0.1) -> float:
    """Grid-search the transform exponent maximizing the Gaussian log-likelihood."""
    lams = np.round(np.arange(grid_lo, grid_hi + step / 2, step), 10)
    lls = [yeo_johnson_loglik(x, lam) for lam in lams]
    return float(lams[int(np.argmax(lls))])


def skewness(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = x.mean()
    s = x.std()
    if s == 0:
        return 0.0
    return float(np.mean((x - m) ** 3) / s**3)


@dataclass
class ColumnStats:
    q1: float | None = None
    q3: float | None = None
    lo_fence: float | None = None
    hi_fence: float | None = None
    lam: float | None = None
    tmin: float = 0.0
    tmax: float = 1.0
    skew: float = 0.0
    constant: bool = False


def fit_column_transform(train_values: np.ndarray, *, allow_power: bool,
                         skew_threshold: float) -> ColumnStats:
    v = np.asarray(train_values, dtype=np.float64)
    st = ColumnStats()
    st.skew = skewness(v)
    if v.max() == v.min():
        st.constant = True
        st.tmin, st.tmax = float(v.min()), float(v.max())
        return st
    if allow_power and abs(st.skew) > skew_threshold:
        st.lam = fit_power_lambda(v)
    t = yeo_johnson(v, st.lam) if st.lam is not None else v
    st.tmin, st.tmax = float(t.min()), float(t.max())
    return st


def apply_column_transform(values: np.ndarray, st: ColumnStats) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if st.constant:
        return np.full_like(v, 0.5)
    t = yeo_johnson(v, st.lam) if st.lam is not None else v
    scaled = (t - st.tmin) / (st.tmax - st.tmin)
    return np.clip(scaled, 0.0, 1.0)


def invert_column_transform(values01: np.ndarray, st: ColumnStats):
    """Map normalized values back to raw units (min-max inverse, then the
    power-transform inverse when one was fitted)."""
    if st.constant:
        return np.full_like(np.asarray(values01, dtype=np.float64), st.tmin)
    t = np.asarray(values01, dtype=np.float64) * (st.tmax - st.tmin) + st.tmin
    if st.lam is not None:
        return yeo_johnson_inverse(t, st.lam)
    return t


# ---------------------------------------------------------------------------
# pipeline driver


@dataclass
class CleanTrip:
    index: int
    frame: dict
    mode: np.ndarray
    direction: int
    start_hour: float
    weekday: int
    season: int
    sched_steps: int
    arrived: bool
    excluded: bool

    def __len__(self) -> int:
        return len(self.frame["fc"])


@dataclass
class PipelineStats:
    columns: dict                 # name -> ColumnStats
    cluster: dict                 # centroids/mean/std/mode1_cluster
    kept: list                    # selected covariate column names
    pearson: dict                 # feature -> {target: r}
    config: PipelineConfig
    split_seed: int


@dataclass
class CleanDataset:
    trips: list
    splits: dict                  # name -> list of trip indices (into .trips)
    stats: PipelineStats

    def split_trips(self, name: str) -> list:
        return [self.trips[i] for i in self.splits[name]]


def trip_to_frame(trip: Trip) -> dict:
    cols = ("lat", "lon", "sog", "fc", "shaft_speed", "heading", "cmd_heading",
            "cmd_shaft", "cmd_mode", "wind_speed", "wind_dir", "current_speed",
            "current_dir", "water_depth", "weather")
    frame = {c: np.array([r.get(c) for r in trip.records], dtype=np.float64) for c in cols}
    n = len(trip.records)
    base_minute = math.floor(trip.start_hour * 60.0)
    t = np.arange(n, dtype=np.float64)
    frame["minute_of_day"] = (base_minute + t) % 1440.0
    frame["weekday"] = (trip.weekday + (base_minute + t) // 1440.0) % 7
    return frame


def run_pipeline(trips: list, config: PipelineConfig | None = None) -> CleanDataset:
    """Fit the full pipeline on the train split and apply it to all trips."""
    config = config or PipelineConfig()
    if not trips:
        raise PreprocessError("empty corpus")

    frames = [trip_to_frame(t) for t in trips]

    # split by whole trips before any fitting
    order = np.random.default_rng(config.split_seed).permutation(len(trips))
    n_train = int(round(config.split_fractions[0] * len(trips)))
    n_val = int(round(config.split_fractions[1] * len(trips)))
    split_of = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            split_of[int(idx)] = "train"
        elif pos < n_train + n_val:
            split_of[int(idx)] = "val"
        else:
            split_of[int(idx)] = "test"
    train_idx = [i for i in range(len(trips)) if split_of[i] == "train"]

    # outlier fences on raw train values
    col_stats: dict = {name: ColumnStats() for name in CONTINUOUS_COLUMNS}
    for col in OUTLIER_CHECK_COLUMNS:
        pooled = np.concatenate([frames[i][col] for i in train_idx])
        lo, hi, q1, q3 = iqr_fences(pooled)
        st = col_stats[col]
        st.q1, st.q3, st.lo_fence, st.hi_fence = q1, q3, lo, hi

    # flag outliers everywhere, then impute
    excluded = []
    for i, frame in enumerate(frames):
        for col in OUTLIER_CHECK_COLUMNS:
            st = col_stats[col]
            mask = apply_fences(frame[col], st.lo_fence, st.hi_fence, st.q3 - st.q1 == 0)
            frame[col] = np.where(mask, np.nan, frame[col])
        imputed, _, exc = impute_frame(frame, config.max_gap)
        frames[i] = engineer_frame(imputed)
        excluded.append(exc)

    usable_train = [i for i in train_idx if not excluded[i]]
    if not usable_train:
        raise PreprocessError("no usable training trips")

    # operating-mode clustering on raw train features
    def mode_matrix(idx_list):
        return np.concatenate(
            [np.stack([frames[i][f] for f in config.mode_features], axis=1) for i in idx_list]
        )

    pooled_sog = np.concatenate([frames[i]["sog"] for i in usable_train])
    cluster = fit_modes(mode_matrix(usable_train), pooled_sog,
                        restarts=config.kmeans_restarts, seed=config.split_seed)
    modes = []
    for frame in frames:
        x = np.stack([frame[f] for f in config.mode_features], axis=1)
        modes.append(assign_modes(cluster, x))

    # Pearson selection on train records (mode-1 rows by default)
    sel_rows = []
    for i in usable_train:
        mask = modes[i] == 1 if config.pearson_mode_only else np.ones(len(modes[i]), dtype=bool)
        sel_rows.append(mask)
    cand_cols = {}
    for name in PEARSON_CANDIDATES:
        cand_cols[name] = np.concatenate([frames[i][name][m] for i, m in zip(usable_train, sel_rows)])
    targets = {name: np.concatenate([frames[i][name][m] for i, m in zip(usable_train, sel_rows)])
               for name in TARGET_COLUMNS}
    kept_candidates, pearson = select_features(
        cand_cols, targets, keep_list=(), floor=config.pearson_floor,
        mutual_cap=config.mutual_r_cap)
    kept = list(kept_candidates) + [k for k in config.keep_list if k not in kept_candidates]

    # transforms fitted on train, applied everywhere
    for col in CONTINUOUS_COLUMNS:
        pooled = np.concatenate([frames[i][col] for i in usable_train])
        fitted = fit_column_transform(pooled, allow_power=col in config.power_columns,
                                      skew_threshold=config.skew_threshold)
        fitted.q1 = col_stats[col].q1
        fitted.q3 = col_stats[col].q3
        fitted.lo_fence = col_stats[col].lo_fence
        fitted.hi_fence = col_stats[col].hi_fence
        col_stats[col] = fitted
    for frame in frames:
        for col in CONTINUOUS_COLUMNS:
            frame[col] = apply_column_transform(frame[col], col_stats[col])

    clean_trips = []
    for i, (trip, frame) in enumerate(zip(trips, frames)):
        clean_trips.append(CleanTrip(
            index=i, frame=frame, mode=modes[i],
            direction=trip.direction, start_hour=trip.start_hour,
            weekday=trip.weekday, season=trip.season,
            sched_steps=trip.sched_steps,
            arrived=bool(trip.arrived) if trip.arrived is not None else True,
            excluded=excluded[i],
        ))

    splits = {"train": [], "val": [], "test": []}
    for i in range(len(trips)):
        if not excluded[i]:
            splits[split_of[i]].append(i)

    stats = PipelineStats(columns=col_stats, cluster=cluster, kept=kept,
                          pearson=pearson, config=config, split_seed=config.split_seed)
    return CleanDataset(trips=clean_trips, splits=splits, stats=stats)


# ---------------------------------------------------------------------------
# persistence (full-precision decimal strings for every fitted constant)


def _num(x):
    if x is None:
        return None
    return repr(float(x))


def stats_to_json(stats: PipelineStats) -> dict:
    cols = {}
    for name, st in stats.columns.items():
        cols[name] = {
            "q1": _num(st.q1), "q3": _num(st.q3),
            "lo_fence": _num(st.lo_fence), "hi_fence": _num(st.hi_fence),
            "lam": _num(st.lam), "tmin": _num(st.tmin), "tmax": _num(st.tmax),
            "skew": _num(st.skew), "constant": st.constant,
        }
    return {
        "schema": 1,
        "columns": cols,
        "cluster": {
            "centroids": [[_num(v) for v in row] for row in stats.cluster["centroids"]],
            "mean": [_num(v) for v in stats.cluster["mean"]],
            "std": [_num(v) for v in stats.cluster["std"]],
            "mode1_cluster": stats.cluster["mode1_cluster"],
        },
        "kept": list(stats.kept),
        "pearson": {f: {t: (_num(r) if r is not None else None) for t, r in rs.items()}
                    for f, rs in stats.pearson.items()},
        "config": {
            "max_gap": stats.config.max_gap,
            "skew_threshold": _num(stats.config.skew_threshold),
            "power_columns": list(stats.config.power_columns),
            "pearson_floor": _num(stats.config.pearson_floor),
            "mutual_r_cap": _num(stats.config.mutual_r_cap),
            "keep_list": list(stats.config.keep_list),
            "kmeans_restarts": stats.config.kmeans_restarts,
            "mode_features": list(stats.config.mode_features),
            "pearson_mode_only": stats.config.pearson_mode_only,
            "split_fractions": [_num(v) for v in stats.config.split_fractions],
            "split_seed": stats.config.split_seed,
        },
        "split_seed": stats.split_seed,
    }


def stats_from_json(doc: dict) -> PipelineStats:
    def num(x):
        return None if x is None else float(x)

    columns = {}
    for name, c in doc["columns"].items():
        columns[name] = ColumnStats(
            q1=num(c["q1"]), q3=num(c["q3"]), lo_fence=num(c["lo_fence"]),
            hi_fence=num(c["hi_fence"]), lam=num(c["lam"]), tmin=num(c["tmin"]),
            tmax=num(c["tmax"]), skew=num(c["skew"]), constant=c["constant"],
        )
    cl = doc["cluster"]
    cluster = {
        "centroids": np.array([[num(v) for v in row] for row in cl["centroids"]]),
        "mean": np.array([num(v) for v in cl["mean"]]),
        "std": np.array([num(v) for v in cl["std"]]),
        "mode1_cluster": cl["mode1_cluster"],
    }
    cfg = doc["config"]
    config = PipelineConfig(
        max_gap=cfg["max_gap"], skew_threshold=num(cfg["skew_threshold"]),
        power_columns=tuple(cfg["power_columns"]),
        pearson_floor=num(cfg["pearson_floor"]), mutual_r_cap=num(cfg["mutual_r_cap"]),
        keep_list=tuple(cfg["keep_list"]), kmeans_restarts=cfg["kmeans_restarts"],
        mode_features=tuple(cfg["mode_features"]),
        pearson_mode_only=cfg["pearson_mode_only"],
        split_fractions=tuple(num(v) for v in cfg["split_fractions"]),
        split_seed=cfg["split_seed"],
    )
    pearson = {f: {t: num(r) for t, r in rs.items()} for f, rs in doc["pearson"].items()}
    return PipelineStats(columns=columns, cluster=cluster, kept=list(doc["kept"]),
                         pearson=pearson, config=config, split_seed=doc["split_seed"])


CLEAN_FRAME_COLUMNS = (
    "fc", "sog", "lat", "lon", "shaft_speed", "heading", "cmd_heading",
    "cmd_shaft", "cmd_mode", "wind_speed", "wind_dir", "current_speed",
    "current_dir", "water_depth", "weather", "minute_of_day", "weekday",
    "accel", "displacement", "rel_wind_sq", "wind_cat", "heading_rate",
)


def save_clean(clean: CleanDataset, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "trips").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ct in enumerate(clean.trips):
        rel = f"trips/trip_{i:04d}.csv"
        with (out_dir / rel).open("w") as fh:
            fh.write(",".join(CLEAN_FRAME_COLUMNS + ("mode",)) + "\n")
            for row in range(len(ct)):
                cells = [repr(float(ct.frame[c][row])) for c in CLEAN_FRAME_COLUMNS]
                cells.append(str(int(ct.mode[row])))
                fh.write(",".join(cells) + "\n")
        entries.append({
            "file": rel, "index": ct.index, "direction": ct.direction,
            "start_hour": ct.start_hour, "weekday": ct.weekday, "season": ct.season,
            "sched_steps": ct.sched_steps, "arrived": ct.arrived,
            "excluded": ct.excluded, "n_records": len(ct),
        })
    doc = {"schema": 1, "trips": entries, "splits": clean.splits}
    (out_dir / "clean.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out_dir / "stats.json").write_text(
        json.dumps(stats_to_json(clean.stats), indent=2, sort_keys=True) + "\n")


def load_clean(in_dir: Path) -> CleanDataset:
    in_dir = Path(in_dir)
    doc = json.loads((in_dir / "clean.json").read_text())
    stats = stats_from_json(json.loads((in_dir / "stats.json").read_text()))
    trips = []
    for entry in doc["trips"]:
        rows = (in_dir / entry["file"]).read_text().strip().split("\n")
        header = rows[0].split(",")
        cols = {h: [] for h in header}
        for line in rows[1:]:
            for h, cell in zip(header, line.split(",")):
                cols[h].append(float(cell))
        frame = {h: np.array(cols[h]) for h in CLEAN_FRAME_COLUMNS}
        mode = np.array(cols["mode"], dtype=np.int64)
        trips.append(CleanTrip(
            index=entry["index"], frame=frame, mode=mode,
            direction=entry["direction"], start_hour=entry["start_hour"],
            weekday=entry["weekday"], season=entry["season"],
            sched_steps=entry["sched_steps"], arrived=entry["arrived"],
            excluded=entry["excluded"],
        ))
    return CleanDataset(trips=trips, splits={k: list(v) for k, v in doc["splits"].items()},
                        stats=stats)
