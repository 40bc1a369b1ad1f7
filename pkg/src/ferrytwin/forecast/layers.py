"""Dense, layer-norm, multi-head attention and feed-forward primitives as
forward/backward numpy function pairs. Everything is float64; caches carry
whatever the matching backward pass needs."""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5


def linear_fwd(x, W, b):
    return x @ W + b, (x, W)


def linear_bwd(dy, cache):
    x, W = cache
    dx = dy @ W.T
    dW = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dW, db


def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def relu_fwd(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_bwd(dy, mask):
    return dy * mask


def softmax_last(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    # [B, T, d] -> [B, h, T, d/h]
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def attention_fwd(q_in, kv_in, p, prefix, n_heads):
    """Multi-head scaled-dot-product attention. Self-attention when
    q_in is kv_in; cross-attention otherwise."""
    q, cq = linear_fwd(q_in, p[f"{prefix}.Wq"], p[f"{prefix}.bq"])
    k, ck = linear_fwd(kv_in, p[f"{prefix}.Wk"], p[f"{prefix}.bk"])
    v, cv = linear_fwd(kv_in, p[f"{prefix}.Wv"], p[f"{prefix}.bv"])
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = qh @ kh.transpose(0, 1, 3, 2) * scale
    attn = softmax_last(scores)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    out, co = linear_fwd(merged, p[f"{prefix}.Wo"], p[f"{prefix}.bo"])
    cache = (cq, ck, cv, co, qh, kh, vh, attn, scale, n_heads)
    return out, cache


def attention_bwd(dout, cache, grads, prefix):
    """Returns (d_q_in, d_kv_in)."""
    cq, ck, cv, co, qh, kh, vh, attn, scale, n_heads = cache
    dmerged, dWo, dbo = linear_bwd(dout, co)
    grads[f"{prefix}.Wo"] += dWo
    grads[f"{prefix}.bo"] += dbo

    B, T, d = dmerged.shape
    dctx = dmerged.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)
    dattn = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx
    # softmax backward
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh

    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    dq_in, dWq, dbq = linear_bwd(dq, cq)
    dk_in, dWk, dbk = linear_bwd(dk, ck)
    dv_in, dWv, dbv = linear_bwd(dv, cv)
    grads[f"{prefix}.Wq"] += dWq
    grads[f"{prefix}.bq"] += dbq
    grads[f"{prefix}.Wk"] += dWk
    grads[f"{prefix}.bk"] += dbk
    grads[f"{prefix}.Wv"] += dWv
    grads[f"{prefix}.bv"] += dbv
    return dq_in, dk_in + dv_in


def ffn_fwd(x, p, prefix):
    h, c1 = linear_fwd(x, p[f"{prefix}.W1"], p[f"{prefix}.b1"])
    a, mask = relu_fwd(h)
    y, c2 = linear_fwd(a, p[f"{prefix}.W2"], p[f"{prefix}.b2"])
    return y, (c1, mask, c2)


def ffn_bwd(dy, cache, grads, prefix):
    c1, mask, c2 = cache
    da, dW2, db2 = linear_bwd(dy, c2)
    grads[f"{prefix}.W2"] += dW2
    grads[f"{prefix}.b2"] += db2
    dh = relu_bwd(da, mask)
    dx, dW1, db1 = linear_bwd(dh, c1)
    grads[f"{prefix}.W1"] += dW1
    grads[f"{prefix}.b1"] += db1
    return dx


def sinusoidal_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(d_model)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k in sorted(params.keys()):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
