"""Feature schema shared by the forecaster and the environment.

Encodes cleaned trips into model tensors. Cyclic quantities use sin/cos
scaled into [0, 1] via (x + 1) / 2; categorical codes become one-hots, so
every encoded entry lies in [0, 1].

A window over rows [s, s+W) predicts the dynamic states at rows
[s+W, s+W+H). The known-future covariate row j is the covariate vector at
absolute row s+W-1+j: the commands/disturbances driving the transition
into predicted step j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import CleanTrip, PipelineStats

DYNAMIC_COLUMNS = ("fc", "sog", "lat", "lon")

# Scalar covariates known over the forecast horizon, canonical order.
COVARIATE_ORDER = (
    "cmd_heading", "cmd_shaft", "cmd_mode",
    "start_hour", "direction",
    "minute_of_day", "weekday", "season", "weather",
    "wind_speed", "wind_dir", "current_speed", "current_dir", "water_depth",
)
# Engineered columns derived from the dynamic state: usable as encoder
# inputs (recomputable from predictions during rollout) but never known
# over the future horizon.
DERIVED_ORDER = ("accel", "displacement", "rel_wind_sq", "wind_cat")

_ENCODERS = {
    "cmd_heading": ("cyc", 2), "cmd_shaft": ("raw", 1), "cmd_mode": ("mode", 1),
    "start_hour": ("hour", 1), "direction": ("raw", 1),
    "minute_of_day": ("cyc1440", 2), "weekday": ("cyc7", 2),
    "season": ("onehot4", 4), "weather": ("onehot4", 4),
    "wind_speed": ("raw", 1), "wind_dir": ("cyc", 2),
    "current_speed": ("raw", 1), "current_dir": ("cyc", 2),
    "water_depth": ("raw", 1),
    "accel": ("raw", 1), "displacement": ("raw", 1), "rel_wind_sq": ("raw", 1),
    "wind_cat": ("onehot4", 4),
}


def _sin01(x):
    return (np.sin(x) + 1.0) / 2.0


def _cos01(x):
    return (np.cos(x) + 1.0) / 2.0


def encode_column(name: str, values: np.ndarray) -> np.ndarray:
    """Encode one scalar column into its [0, 1] feature block [T, width]."""
    kind, width = _ENCODERS[name]
    v = np.asarray(values, dtype=np.float64)
    if kind == "raw":
        return v[:, None]
    if kind == "mode":
        return (v - 1.0)[:, None]
    if kind == "hour":
        return (v / 24.0)[:, None]
    if kind == "cyc":
        rad = np.radians(v)
        return np.stack([_sin01(rad), _cos01(rad)], axis=1)
    if kind == "cyc1440":
        rad = 2.0 * np.pi * v / 1440.0
        return np.stack([_sin01(rad), _cos01(rad)], axis=1)
    if kind == "cyc7":
        rad = 2.0 * np.pi * v / 7.0
        return np.stack([_sin01(rad), _cos01(rad)], axis=1)
    if kind == "onehot4":
        codes = np.clip(v.astype(np.int64), 0, 3)
        out = np.zeros((len(v), 4))
        out[np.arange(len(v)), codes] = 1.0
        return out
    raise KeyError(name)


def encoded_names(name: str) -> list:
    kind, width = _ENCODERS[name]
    if width == 1:
        return [name]
    if kind.startswith("cyc"):
        return [f"{name}_sin", f"{name}_cos"]
    return [f"{name}_{i}" for i in range(width)]


@dataclass(frozen=True)
class FeatureSchema:
    """Resolved feature layout: which scalar columns feed the model."""

    covariates: tuple      # kept scalar covariate names, canonical order
    derived: tuple         # kept derived names, canonical order

    @property
    def cov_dim(self) -> int:
        return sum(_ENCODERS[n][1] for n in self.covariates)

    @property
    def derived_dim(self) -> int:
        return sum(_ENCODERS[n][1] for n in self.derived)

    @property
    def past_dim(self) -> int:
        return len(DYNAMIC_COLUMNS) + self.derived_dim + self.cov_dim

    def encoded_covariate_names(self) -> list:
        return [en for n in self.covariates for en in encoded_names(n)]

    def encoded_past_names(self) -> list:
        return (list(DYNAMIC_COLUMNS)
                + [en for n in self.derived for en in encoded_names(n)]
                + self.encoded_covariate_names())

    def to_jsonable(self) -> dict:
        return {"covariates": list(self.covariates), "derived": list(self.derived)}

    @classmethod
    def from_jsonable(cls, doc: dict) -> "FeatureSchema":
        return cls(covariates=tuple(doc["covariates"]), derived=tuple(doc["derived"]))


def schema_from_stats(stats: PipelineStats) -> FeatureSchema:
    kept = set(stats.kept)
    return FeatureSchema(
        covariates=tuple(n for n in COVARIATE_ORDER if n in kept),
        derived=tuple(n for n in DERIVED_ORDER if n in kept),
    )


def _column_series(ct: CleanTrip, name: str) -> np.ndarray:
    n = len(ct)
    if name == "start_hour":
        return np.full(n, ct.start_hour)
    if name == "direction":
        return np.full(n, float(ct.direction))
    if name == "season":
        return np.full(n, float(ct.season))
    return np.asarray(ct.frame[name], dtype=np.float64)


def encode_trip(ct: CleanTrip, schema: FeatureSchema) -> dict:
    """Per-trip model tensors: dyn [T,4], der [T,Dd], cov [T,K]."""
    dyn = np.stack([ct.frame[c] for c in DYNAMIC_COLUMNS], axis=1).astype(np.float64)
    der_blocks = [encode_column(n, _column_series(ct, n)) for n in schema.derived]
    cov_blocks = [encode_column(n, _column_series(ct, n)) for n in schema.covariates]
    der = np.concatenate(der_blocks, axis=1) if der_blocks else np.zeros((len(ct), 0))
    cov = np.concatenate(cov_blocks, axis=1) if cov_blocks else np.zeros((len(ct), 0))
    return {"dyn": dyn, "der": der, "cov": cov}


def window_count(n_records: int, W: int, H: int) -> int:
    return max(0, n_records - W - H + 1)


def build_windows(tensors: dict, W: int, H: int) -> list:
    """All stride-1 windows of one trip as (past, future, target) tuples."""
    dyn, der, cov = tensors["dyn"], tensors["der"], tensors["cov"]
    T = len(dyn)
    out = []
    for s in range(window_count(T, W, H)):
        past = np.concatenate([dyn[s:s + W], der[s:s + W], cov[s:s + W]], axis=1)
        fut = cov[s + W - 1:s + W - 1 + H]
        target = dyn[s + W:s + W + H]
        out.append((past, fut, target))
    return out


# Fixed observation layout for the decision environment (independent of the
# forecaster's selected covariates). Entries are [0, 1].
OBSERVATION_LAYOUT = (
    "start_hour", "direction",
    "heading_rate", "resistance", "displacement",
    "fc", "sog", "lat", "lon",
    "minute_sin", "minute_cos", "weekday_sin", "weekday_cos",
    "current_speed", "current_dir_sin", "current_dir_cos",
    "season_0", "season_1", "season_2", "season_3",
    "weather_0", "weather_1", "weather_2", "weather_3",
    "wind_cat_0", "wind_cat_1", "wind_cat_2", "wind_cat_3",
    "wind_force", "water_depth",
)

OBS_DIM = len(OBSERVATION_LAYOUT)
