"""Closed-form ridge baseline over flattened windows.

Serves as a sanity baseline and as an independently-checkable reference:
the fit solves the ridge normal equations directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RidgeError(ValueError):
    pass


@dataclass
class LinearARModel:
    weights: np.ndarray    # [n_features + 1, horizon * 4] (first row: intercept)
    horizon: int


def _design(past: np.ndarray, fut: np.ndarray) -> np.ndarray:
    n = past.shape[0]
    flat = np.concatenate([past.reshape(n, -1), fut.reshape(n, -1)], axis=1)
    return np.concatenate([np.ones((n, 1)), flat], axis=1)


def fit_linear_ar(past: np.ndarray, fut: np.ndarray, target: np.ndarray,
                  ridge_lambda: float = 1e-6) -> LinearARModel:
    """Solve (X'X + lambda*I) w = X'Y with an unpenalized intercept."""
    if ridge_lambda < 0:
        raise RidgeError("ridge penalty must be non-negative")
    X = _design(past, fut)
    Y = target.reshape(target.shape[0], -1)
    gram = X.T @ X
    reg = ridge_lambda * np.eye(X.shape[1])
    reg[0, 0] = 0.0
    w = np.linalg.solve(gram + reg, X.T @ Y)
    return LinearARModel(weights=w, horizon=target.shape[1])


def predict_linear_ar(model: LinearARModel, past: np.ndarray, fut: np.ndarray) -> np.ndarray:
    X = _design(past, fut)
    out = X @ model.weights
    return out.reshape(past.shape[0], model.horizon, -1)
