"""Attention encoder-decoder state forecaster with a GRU residual corrector.

The encoder self-attends over the past window; the decoder's known-future
covariate queries cross-attend to the encoder output; a linear head emits
the four dynamic states per horizon step. The residual corrector runs a GRU
over [base predictions || known-future covariates] and adds a projected
correction to the base output.

All passes are float64 with hand-written backward functions; gradients are
accumulated into a flat name -> array dict.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .gru import gru_backward, gru_forward, init_gru_params
from .layers import (
    attention_bwd,
    attention_fwd,
    ffn_bwd,
    ffn_fwd,
    layernorm_bwd,
    layernorm_fwd,
    linear_bwd,
    linear_fwd,
    sinusoidal_encoding,
)

N_OUTPUTS = 4


class ForecastError(ValueError):
    pass


@dataclass(frozen=True)
class ForecastConfig:
    window: int = 25
    horizon: int = 5
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    gru_hidden: int = 32
    lr: float = 1e-3
    epochs: int = 60
    ar_epochs: int = 15
    gru_epochs: int = 80
    batch_size: int = 128
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.window > self.horizon >= 1:
            raise ForecastError("window must exceed horizon >= 1")
        if self.d_model % self.n_heads != 0:
            raise ForecastError("d_model must be divisible by n_heads")

    def to_jsonable(self) -> dict:
        return asdict(self)

    @classmethod
    def from_jsonable(cls, doc: dict) -> "ForecastConfig":
        return cls(**doc)


def _xavier(rng, din, dout):
    return rng.normal(0.0, np.sqrt(2.0 / (din + dout)), size=(din, dout))


def init_params(cfg: ForecastConfig, past_dim: int, cov_dim: int,
                seed: int | None = None, zero_residual: bool = True) -> dict:
    """Fresh parameter dict. The residual output projection starts at zero
    so the corrected model initially equals the base model; grad checking
    uses zero_residual=False to exercise every path."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d = cfg.d_model
    p = {
        "enc_embed.W": _xavier(rng, past_dim, d), "enc_embed.b": np.zeros(d),
        "dec_embed.W": _xavier(rng, cov_dim, d), "dec_embed.b": np.zeros(d),
    }

    def add_ln(name):
        p[f"{name}.g"] = np.ones(d)
        p[f"{name}.b"] = np.zeros(d)

    def add_attn(name):
        for w in ("Wq", "Wk", "Wv", "Wo"):
            p[f"{name}.{w}"] = _xavier(rng, d, d)
        for b in ("bq", "bk", "bv", "bo"):
            p[f"{name}.{b}"] = np.zeros(d)

    def add_ffn(name):
        p[f"{name}.W1"] = _xavier(rng, d, cfg.d_ff)
        p[f"{name}.b1"] = np.zeros(cfg.d_ff)
        p[f"{name}.W2"] = _xavier(rng, cfg.d_ff, d)
        p[f"{name}.b2"] = np.zeros(d)

    for i in range(cfg.n_layers):
        add_ln(f"enc{i}.ln1")
        add_attn(f"enc{i}.attn")
        add_ln(f"enc{i}.ln2")
        add_ffn(f"enc{i}.ffn")
    add_ln("enc_final")
    for i in range(cfg.n_layers):
        add_ln(f"dec{i}.ln1")
        add_attn(f"dec{i}.self")
        add_ln(f"dec{i}.ln2")
        add_attn(f"dec{i}.cross")
        add_ln(f"dec{i}.ln3")
        add_ffn(f"dec{i}.ffn")
    add_ln("dec_final")
    p["head.W"] = _xavier(rng, d, N_OUTPUTS)
    p["head.b"] = np.zeros(N_OUTPUTS)

    p.update(init_gru_params(N_OUTPUTS + cov_dim, cfg.gru_hidden, rng, prefix="res.gru"))
    if zero_residual:
        p["res.out.W"] = np.zeros((cfg.gru_hidden, N_OUTPUTS))
    else:
        p["res.out.W"] = _xavier(rng, cfg.gru_hidden, N_OUTPUTS)
    p["res.out.b"] = np.zeros(N_OUTPUTS)
    return p


def zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def base_param_names(params: dict) -> list:
    return [k for k in params if not k.startswith("res.")]


def residual_param_names(params: dict) -> list:
    return [k for k in params if k.startswith("res.")]


def base_forward(p: dict, cfg: ForecastConfig, past: np.ndarray, fut: np.ndarray):
    """past: [B, W, F]; fut: [B, Hx, K] with Hx <= horizon.

    Returns (pred [B, Hx, 4], caches).
    """
    if past.ndim != 3 or fut.ndim != 3:
        raise ForecastError("expected batched 3-d inputs")
    if past.shape[1] != cfg.window:
        raise ForecastError(f"past window {past.shape[1]} != {cfg.window}")
    if fut.shape[1] > cfg.horizon or fut.shape[1] < 1:
        raise ForecastError(f"future length {fut.shape[1]} outside [1, {cfg.horizon}]")

    pe = sinusoidal_encoding(max(cfg.window, cfg.horizon), cfg.d_model)
    caches: dict = {"enc": [], "dec": []}

    x, caches["enc_embed"] = linear_fwd(past, p["enc_embed.W"], p["enc_embed.b"])
    x = x + pe[:past.shape[1]]
    for i in range(cfg.n_layers):
        a_in, ln1 = layernorm_fwd(x, p[f"enc{i}.ln1.g"], p[f"enc{i}.ln1.b"])
        attn, ac = attention_fwd(a_in, a_in, p, f"enc{i}.attn", cfg.n_heads)
        h1 = x + attn
        f_in, ln2 = layernorm_fwd(h1, p[f"enc{i}.ln2.g"], p[f"enc{i}.ln2.b"])
        f, fc = ffn_fwd(f_in, p, f"enc{i}.ffn")
        x = h1 + f
        caches["enc"].append((ln1, ac, ln2, fc))
    enc_out, caches["enc_final"] = layernorm_fwd(x, p["enc_final.g"], p["enc_final.b"])

    y, caches["dec_embed"] = linear_fwd(fut, p["dec_embed.W"], p["dec_embed.b"])
    y = y + pe[:fut.shape[1]]
    for i in range(cfg.n_layers):
        s_in, ln1 = layernorm_fwd(y, p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
        sa, sc = attention_fwd(s_in, s_in, p, f"dec{i}.self", cfg.n_heads)
        h1 = y + sa
        c_in, ln2 = layernorm_fwd(h1, p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"])
        ca, cc = attention_fwd(c_in, enc_out, p, f"dec{i}.cross", cfg.n_heads)
        h2 = h1 + ca
        f_in, ln3 = layernorm_fwd(h2, p[f"dec{i}.ln3.g"], p[f"dec{i}.ln3.b"])
        f, fc = ffn_fwd(f_in, p, f"dec{i}.ffn")
        y = h2 + f
        caches["dec"].append((ln1, sc, ln2, cc, ln3, fc))
    dec_out, caches["dec_final"] = layernorm_fwd(y, p["dec_final.g"], p["dec_final.b"])
    pred, caches["head"] = linear_fwd(dec_out, p["head.W"], p["head.b"])
    return pred, caches


def base_backward(p: dict, cfg: ForecastConfig, dpred: np.ndarray,
                  caches: dict, grads: dict) -> None:
    """Accumulate base-model gradients for upstream dpred [B, Hx, 4]."""
    ddec_out, dW, db = linear_bwd(dpred, caches["head"])
    grads["head.W"] += dW
    grads["head.b"] += db
    dy, dg, db = layernorm_bwd(ddec_out, caches["dec_final"])
    grads["dec_final.g"] += dg
    grads["dec_final.b"] += db

    denc_out = None
    for i in range(cfg.n_layers - 1, -1, -1):
        ln1, sc, ln2, cc, ln3, fc = caches["dec"][i]
        df_in = ffn_bwd(dy, fc, grads, f"dec{i}.ffn")
        dh2, dg, db = layernorm_bwd(df_in, ln3)
        grads[f"dec{i}.ln3.g"] += dg
        grads[f"dec{i}.ln3.b"] += db
        dh2 = dh2 + dy

        dc_in, denc = attention_bwd(dh2, cc, grads, f"dec{i}.cross")
        denc_out = denc if denc_out is None else denc_out + denc
        dh1, dg, db = layernorm_bwd(dc_in, ln2)
        grads[f"dec{i}.ln2.g"] += dg
        grads[f"dec{i}.ln2.b"] += db
        dh1 = dh1 + dh2

        dq, dkv = attention_bwd(dh1, sc, grads, f"dec{i}.self")
        ds_in = dq + dkv
        dyy, dg, db = layernorm_bwd(ds_in, ln1)
        grads[f"dec{i}.ln1.g"] += dg
        grads[f"dec{i}.ln1.b"] += db
        dy = dyy + dh1

    _, dW, db = linear_bwd(dy, caches["dec_embed"])
    grads["dec_embed.W"] += dW
    grads["dec_embed.b"] += db

    dx, dg, db = layernorm_bwd(denc_out, caches["enc_final"])
    grads["enc_final.g"] += dg
    grads["enc_final.b"] += db
    for i in range(cfg.n_layers - 1, -1, -1):
        ln1, ac, ln2, fc = caches["enc"][i]
        df_in = ffn_bwd(dx, fc, grads, f"enc{i}.ffn")
        dh1, dg, db = layernorm_bwd(df_in, ln2)
        grads[f"enc{i}.ln2.g"] += dg
        grads[f"enc{i}.ln2.b"] += db
        dh1 = dh1 + dx

        dq, dkv = attention_bwd(dh1, ac, grads, f"enc{i}.attn")
        da_in = dq + dkv
        dxx, dg, db = layernorm_bwd(da_in, ln1)
        grads[f"enc{i}.ln1.g"] += dg
        grads[f"enc{i}.ln1.b"] += db
        dx = dxx + dh1

    _, dW, db = linear_bwd(dx, caches["enc_embed"])
    grads["enc_embed.W"] += dW
    grads["enc_embed.b"] += db


def residual_forward(p: dict, base_pred: np.ndarray, fut: np.ndarray):
    """GRU residual over [base predictions || future covariates]."""
    gin = np.concatenate([base_pred, fut], axis=2)
    B = gin.shape[0]
    h0 = np.zeros((B, p["res.gru.Uz"].shape[0]))
    hs, gru_caches = gru_forward(p, gin, h0, prefix="res.gru")
    res, out_cache = linear_fwd(hs, p["res.out.W"], p["res.out.b"])
    return res, (gru_caches, out_cache)


def residual_backward(p: dict, dres: np.ndarray, caches, grads: dict):
    """Returns d(base_pred) flowing through the residual input slots."""
    gru_caches, out_cache = caches
    dhs, dW, db = linear_bwd(dres, out_cache)
    grads["res.out.W"] += dW
    grads["res.out.b"] += db
    dgin, _ = gru_backward(p, dhs, gru_caches, grads, prefix="res.gru")
    return dgin[:, :, :N_OUTPUTS]


def corrected_forward(p: dict, cfg: ForecastConfig, past: np.ndarray, fut: np.ndarray):
    """Base forecast plus GRU residual. Returns (corrected, base_pred, caches)."""
    base_pred, base_caches = base_forward(p, cfg, past, fut)
    res, res_caches = residual_forward(p, base_pred, fut)
    return base_pred + res, base_pred, (base_caches, res_caches)


def corrected_backward(p: dict, cfg: ForecastConfig, dcorr: np.ndarray,
                       caches, grads: dict, *, through_base: bool = True) -> None:
    base_caches, res_caches = caches
    dbase = residual_backward(p, dcorr, res_caches, grads)
    if through_base:
        base_backward(p, cfg, dcorr + dbase, base_caches, grads)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. pred."""
    diff = pred - target
    loss = float(np.mean(diff * diff))
    dpred = 2.0 * diff / diff.size
    return loss, dpred


def clone_params(p: dict) -> dict:
    return {k: v.copy() for k, v in p.items()}
