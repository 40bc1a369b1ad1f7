"""Gated recurrent unit with hand-rolled backpropagation through time.

Gate convention: z_t = sigma(W_z x_t + U_z h_{t-1} + b_z), r_t likewise,
hcand_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h),
h_t = (1 - z_t) * h_{t-1} + z_t * hcand_t.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def init_gru_params(input_dim: int, hidden: int, rng: np.random.Generator,
                    prefix: str = "gru") -> dict:
    def mat(din, dout):
        return rng.normal(0.0, np.sqrt(2.0 / (din + dout)), size=(din, dout))

    p = {}
    for gate in ("z", "r", "h"):
        p[f"{prefix}.W{gate}"] = mat(input_dim, hidden)
        p[f"{prefix}.U{gate}"] = mat(hidden, hidden)
        p[f"{prefix}.b{gate}"] = np.zeros(hidden)
    return p


def gru_forward(p: dict, x: np.ndarray, h0: np.ndarray, prefix: str = "gru"):
    """x: [B, T, I], h0: [B, Hd]. Returns (hs [B, T, Hd], caches).

    An empty sequence (T = 0) returns h0 broadcast to zero steps.
    """
    B, T, _ = x.shape
    h = h0.copy()
    hs = np.empty((B, T, h0.shape[-1]))
    caches = []
    Wz, Uz, bz = p[f"{prefix}.Wz"], p[f"{prefix}.Uz"], p[f"{prefix}.bz"]
    Wr, Ur, br = p[f"{prefix}.Wr"], p[f"{prefix}.Ur"], p[f"{prefix}.br"]
    Wh, Uh, bh = p[f"{prefix}.Wh"], p[f"{prefix}.Uh"], p[f"{prefix}.bh"]
    for t in range(T):
        xt = x[:, t, :]
        z = sigmoid(xt @ Wz + h @ Uz + bz)
        r = sigmoid(xt @ Wr + h @ Ur + br)
        rh = r * h
        hc = np.tanh(xt @ Wh + rh @ Uh + bh)
        h_new = (1.0 - z) * h + z * hc
        caches.append((xt, h.copy(), z, r, rh, hc))
        hs[:, t, :] = h_new
        h = h_new
    return hs, caches


def gru_backward(p: dict, dhs: np.ndarray, caches: list, grads: dict,
                 prefix: str = "gru"):
    """dhs: [B, T, Hd] upstream gradients on every hidden state.

    Accumulates parameter gradients into ``grads`` and returns
    (dx [B, T, I], dh0 [B, Hd]).
    """
    Wz, Uz = p[f"{prefix}.Wz"], p[f"{prefix}.Uz"]
    Wr, Ur = p[f"{prefix}.Wr"], p[f"{prefix}.Ur"]
    Wh, Uh = p[f"{prefix}.Wh"], p[f"{prefix}.Uh"]
    B, T, _ = dhs.shape
    dx = np.zeros((B, T, Wz.shape[0]))
    dh_next = np.zeros((B, Uz.shape[0]))
    for t in range(T - 1, -1, -1):
        xt, h_prev, z, r, rh, hc = caches[t]
        dh = dhs[:, t, :] + dh_next

        dz = dh * (hc - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)

        da_h = dhc * (1.0 - hc * hc)
        grads[f"{prefix}.Wh"] += xt.T @ da_h
        grads[f"{prefix}.Uh"] += rh.T @ da_h
        grads[f"{prefix}.bh"] += da_h.sum(axis=0)
        drh = da_h @ Uh.T
        dr = drh * h_prev
        dh_prev += drh * r

        da_z = dz * z * (1.0 - z)
        grads[f"{prefix}.Wz"] += xt.T @ da_z
        grads[f"{prefix}.Uz"] += h_prev.T @ da_z
        grads[f"{prefix}.bz"] += da_z.sum(axis=0)
        dh_prev += da_z @ Uz.T

        da_r = dr * r * (1.0 - r)
        grads[f"{prefix}.Wr"] += xt.T @ da_r
        grads[f"{prefix}.Ur"] += h_prev.T @ da_r
        grads[f"{prefix}.br"] += da_r.sum(axis=0)
        dh_prev += da_r @ Ur.T

        dx[:, t, :] = da_z @ Wz.T + da_r @ Wr.T + da_h @ Wh.T
        dh_next = dh_prev
    return dx, dh_next
