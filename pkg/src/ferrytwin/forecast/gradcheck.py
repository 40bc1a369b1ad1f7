"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .model import (
    ForecastConfig,
    corrected_backward,
    corrected_forward,
    mse_loss,
    zero_grads,
)


def grad_check(params: dict, cfg: ForecastConfig, past: np.ndarray,
               fut: np.ndarray, target: np.ndarray, *, n_params: int = 200,
               h: float = 1e-5, seed: int = 0, param_filter=None) -> float:
    """Max relative error between analytic and central-difference gradients
    over ``n_params`` randomly selected parameters (double precision).
    """
    corr, _, caches = corrected_forward(params, cfg, past, fut)
    _, dcorr = mse_loss(corr, target)
    grads = zero_grads(params)
    corrected_backward(params, cfg, dcorr, caches, grads)

    names = sorted(k for k in params if param_filter is None or param_filter(k))
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def loss_at() -> float:
        c, _, _ = corrected_forward(params, cfg, past, fut)
        return mse_loss(c, target)[0]

    worst = 0.0
    for flat_idx in picks:
        name_i = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name = names[name_i]
        local = int(flat_idx - offsets[name_i])
        idx = np.unravel_index(local, params[name].shape)

        orig = params[name][idx]
        params[name][idx] = orig + h
        lp = loss_at()
        params[name][idx] = orig - h
        lm = loss_at()
        params[name][idx] = orig

        numeric = (lp - lm) / (2.0 * h)
        analytic = grads[name][idx]
        denom = max(abs(numeric) + abs(analytic), 1e-3)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
