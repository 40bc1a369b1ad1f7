"""Multi-step trip rollouts.

AR mode advances in horizon-sized blocks, writing each block's (clipped)
predictions back into the dynamic-state slots of later windows; commands,
disturbances and statics always come from the log. NAR mode uses the same
striding but keeps ground-truth history. Engineered inputs that derive from
the dynamic state (acceleration, displacement, relative wind) are
recomputed from the predictions so the model never peeks at the truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import GeoPoint, haversine_m
from ..preprocess import (
    CleanTrip,
    PipelineStats,
    apply_column_transform,
    invert_column_transform,
    wind_features,
)
from ..schema import FeatureSchema, encode_column, encode_trip
from .model import ForecastConfig, ForecastError


@dataclass
class TripRollout:
    """Mutable rollout state for one trip."""

    tensors: dict            # dyn/der/cov (normalized); dyn/der mutated in AR mode
    sog_raw: np.ndarray
    lat_raw: np.ndarray
    lon_raw: np.ndarray
    wind_raw: np.ndarray     # m/s
    wind_dir: np.ndarray     # degrees
    cmd_heading: np.ndarray  # degrees
    truth_dyn: np.ndarray    # untouched normalized truth [T, 4]

    def __len__(self) -> int:
        return len(self.truth_dyn)


def make_rollout_state(ct: CleanTrip, schema: FeatureSchema, stats: PipelineStats) -> TripRollout:
    tensors = encode_trip(ct, schema)
    cols = stats.columns
    return TripRollout(
        tensors={k: v.copy() for k, v in tensors.items()},
        sog_raw=invert_column_transform(ct.frame["sog"], cols["sog"]),
        lat_raw=invert_column_transform(ct.frame["lat"], cols["lat"]),
        lon_raw=invert_column_transform(ct.frame["lon"], cols["lon"]),
        wind_raw=invert_column_transform(ct.frame["wind_speed"], cols["wind_speed"]),
        wind_dir=np.asarray(ct.frame["wind_dir"], dtype=np.float64),
        cmd_heading=np.asarray(ct.frame["cmd_heading"], dtype=np.float64),
        truth_dyn=tensors["dyn"].copy(),
    )


def write_predictions(state: TripRollout, schema: FeatureSchema,
                      stats: PipelineStats, start: int, pred01: np.ndarray) -> None:
    """Overwrite dynamic rows [start, start+len) with predictions and
    recompute the derived feature rows that depend on them."""
    h = len(pred01)
    state.tensors["dyn"][start:start + h] = pred01
    cols = stats.columns
    state.sog_raw[start:start + h] = invert_column_transform(pred01[:, 1], cols["sog"])
    state.lat_raw[start:start + h] = invert_column_transform(pred01[:, 2], cols["lat"])
    state.lon_raw[start:start + h] = invert_column_transform(pred01[:, 3], cols["lon"])

    if not schema.derived:
        return
    rows = range(start, start + h)
    blocks = {}
    if "accel" in schema.derived:
        accel = np.array([state.sog_raw[t] - state.sog_raw[t - 1] for t in rows])
        blocks["accel"] = apply_column_transform(accel, cols["accel"])[:, None]
    if "displacement" in schema.derived:
        disp = np.array([
            haversine_m(GeoPoint(np.clip(state.lat_raw[t - 1], -90, 90), state.lon_raw[t - 1]),
                        GeoPoint(np.clip(state.lat_raw[t], -90, 90), state.lon_raw[t]))
            for t in rows
        ])
        blocks["displacement"] = apply_column_transform(disp, cols["displacement"])[:, None]
    if "rel_wind_sq" in schema.derived or "wind_cat" in schema.derived:
        rel = np.empty(h)
        cat = np.empty(h)
        for j, t in enumerate(rows):
            rel[j], cat[j] = wind_features(state.wind_raw[t], state.wind_dir[t],
                                           state.sog_raw[t], state.cmd_heading[t])
        if "rel_wind_sq" in schema.derived:
            blocks["rel_wind_sq"] = apply_column_transform(rel, cols["rel_wind_sq"])[:, None]
        if "wind_cat" in schema.derived:
            blocks["wind_cat"] = encode_column("wind_cat", cat)

    offset = 0
    for name in schema.derived:
        width = blocks[name].shape[1]
        state.tensors["der"][start:start + h, offset:offset + width] = blocks[name]
        offset += width


def block_spans(T: int, W: int, H: int) -> list:
    """(past_start, horizon) per rollout block; the final block may be short."""
    spans = []
    s = 0
    while W + s < T:
        spans.append((s, min(H, T - W - s)))
        s += H
    return spans


def rollout_trip(state: TripRollout, predict_fn, cfg: ForecastConfig,
                 schema: FeatureSchema, stats: PipelineStats, mode: str = "ar") -> np.ndarray:
    """Predicted dynamic states for steps [W, T). ``predict_fn`` maps
    (past [1,W,F], fut [1,h,K]) to [1,h,4]."""
    preds = rollout_trips([state], predict_fn, cfg, schema, stats, mode=mode)
    return preds[0]


def rollout_trips(states: list, predict_fn, cfg: ForecastConfig,
                  schema: FeatureSchema, stats: PipelineStats,
                  mode: str = "ar") -> list:
    """Batched rollout across trips; returns one [T_i - W, 4] array each."""
    if mode not in ("ar", "nar"):
        raise ForecastError(f"unknown rollout mode {mode!r}")
    W, H = cfg.window, cfg.horizon
    for st in states:
        if len(st) <= W + 0:
            raise ForecastError("trip too short for rollout")
    outputs = [np.empty((len(st) - W, 4)) for st in states]
    spans = [block_spans(len(st), W, H) for st in states]
    max_blocks = max(len(s) for s in spans)

    for b in range(max_blocks):
        active = [i for i in range(len(states)) if b < len(spans[i])]
        by_h: dict = {}
        for i in active:
            by_h.setdefault(spans[i][b][1], []).append(i)
        for h, idxs in sorted(by_h.items()):
            pasts, futs = [], []
            for i in idxs:
                s, _ = spans[i][b]
                t = states[i].tensors
                pasts.append(np.concatenate([t["dyn"][s:s + W], t["der"][s:s + W],
                                             t["cov"][s:s + W]], axis=1))
                futs.append(t["cov"][s + W - 1:s + W - 1 + h])
            pred = predict_fn(np.stack(pasts), np.stack(futs))
            pred = np.clip(pred, 0.0, 1.0)
            for j, i in enumerate(idxs):
                s, _ = spans[i][b]
                outputs[i][s:s + h] = pred[j]
                if mode == "ar":
                    write_predictions(states[i], schema, stats, s + W, pred[j])
    return outputs
