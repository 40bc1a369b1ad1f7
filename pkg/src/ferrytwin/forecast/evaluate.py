"""Test-set evaluation and the four-column comparison report.

Every column is scored under the deployment condition: auto-regressive
whole-trip rollout on held-out trips. Columns differ in how the base was
trained (ground-truth history vs fine-tuned on its own rollouts) and in
whether the GRU corrector is applied.

Reported per variable and column: pooled step RMSE, a dispersion column
(std of per-trip RMSE by default; per-step error std also stored), and
pooled R^2 on normalized values.
"""

from __future__ import annotations

import json

import numpy as np

from ..preprocess import CleanDataset, PipelineStats
from ..schema import FeatureSchema
from .model import ForecastConfig, base_forward, corrected_forward
from .rollout import make_rollout_state, rollout_trips

VARIABLES = ("FC", "SOG", "LAT", "LON")
MODES = ("NAR", "NAR+GRU", "AR", "AR+GRU")
_VARIANT_OF_MODE = {"NAR": "nar", "NAR+GRU": "nar_gru", "AR": "ar", "AR+GRU": "ar_gru"}


def predictor(params: dict, cfg: ForecastConfig, corrected: bool):
    if corrected:
        def predict(past, fut):
            return corrected_forward(params, cfg, past, fut)[0]
    else:
        def predict(past, fut):
            return base_forward(params, cfg, past, fut)[0]
    return predict


def rollout_errors(params: dict, cfg: ForecastConfig, trips: list,
                   schema: FeatureSchema, stats: PipelineStats,
                   corrected: bool) -> dict:
    """Per-variable metrics of a deployment rollout over the given trips."""
    states = [make_rollout_state(ct, schema, stats) for ct in trips
              if len(ct) > cfg.window]
    preds = rollout_trips(states, predictor(params, cfg, corrected), cfg,
                          schema, stats, mode="ar")
    out = {}
    for vi, var in enumerate(VARIABLES):
        err_chunks = []
        truth_chunks = []
        trip_rmses = []
        for st, pr in zip(states, preds):
            truth = st.truth_dyn[cfg.window:, vi]
            err = pr[:, vi] - truth
            err_chunks.append(err)
            truth_chunks.append(truth)
            trip_rmses.append(float(np.sqrt(np.mean(err * err))))
        err = np.concatenate(err_chunks)
        truth = np.concatenate(truth_chunks)
        ss_tot = float(((truth - truth.mean()) ** 2).sum())
        out[var] = {
            "rmse": float(np.sqrt(np.mean(err * err))),
            "std_trip_rmse": float(np.std(trip_rmses)),
            "std_step_error": float(np.std(err)),
            "r2": (1.0 - float((err * err).sum()) / ss_tot) if ss_tot > 0 else None,
        }
    return out


def evaluate(variants: dict, cfg: ForecastConfig, clean: CleanDataset,
             schema: FeatureSchema, split: str = "test") -> dict:
    """Build the 4-variable x 3-metric x 4-mode report for the variants
    present; missing variants yield null columns."""
    trips = [ct for ct in clean.split_trips(split) if len(ct) > cfg.window]
    report = {"split": split, "n_trips": len(trips), "std_shown": "std_trip_rmse",
              "grid": {}}
    for mode in MODES:
        variant = _VARIANT_OF_MODE[mode]
        if variant not in variants:
            report["grid"][mode] = None
            continue
        report["grid"][mode] = rollout_errors(
            variants[variant], cfg, trips, schema, clean.stats,
            corrected=variant.endswith("_gru"),
        )
    return report


def render_report(report: dict) -> str:
    """Fixed-width text table shaped like the four-column comparison."""
    std_key = report.get("std_shown", "std_trip_rmse")
    lines = []
    header = f"{'':6s}{'Metric':8s}" + "".join(f"{m:>10s}" for m in MODES)
    lines.append(header)
    lines.append("-" * len(header))
    for var in VARIABLES:
        for metric, key in (("RMSE", "rmse"), ("Std.", std_key), ("R2", "r2")):
            label = var if metric == "RMSE" else ""
            row = f"{label:6s}{metric:8s}"
            for mode in MODES:
                cell = report["grid"].get(mode)
                if cell is None:
                    row += f"{'-':>10s}"
                    continue
                value = cell[var][key]
                row += f"{'undef' if value is None else format(value, '.4f'):>10s}"
            lines.append(row)
        lines.append("-" * len(header))
    lines.append(f"std column: {std_key}; metrics on normalized values; "
                 f"{report['n_trips']} {report['split']} trips, AR rollout.")
    return "\n".join(lines)


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
