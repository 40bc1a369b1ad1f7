import numpy as np
import pytest

from ferrytwin.forecast.gradcheck import grad_check
from ferrytwin.forecast.layers import attention_fwd, sinusoidal_encoding
from ferrytwin.forecast.model import (
    ForecastConfig,
    ForecastError,
    base_forward,
    corrected_forward,
    init_params,
    mse_loss,
)

SMALL = ForecastConfig(window=10, horizon=3, d_model=16, n_heads=2, n_layers=1,
                       d_ff=32, gru_hidden=8, batch_size=8, seed=0)


def sample(cfg, F, K, B=2, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.random((B, cfg.window, F)), rng.random((B, cfg.horizon, K)),
            rng.random((B, cfg.horizon, 4)))


class TestConfig:
    def test_window_must_exceed_horizon(self):
        with pytest.raises(ForecastError):
            ForecastConfig(window=5, horizon=5)

    def test_heads_divide_d_model(self):
        with pytest.raises(ForecastError):
            ForecastConfig(d_model=30, n_heads=4)


class TestForward:
    def test_output_shape(self):
        p = init_params(SMALL, 7, 5)
        past, fut, _ = sample(SMALL, 7, 5, B=3)
        pred, _ = base_forward(p, SMALL, past, fut)
        assert pred.shape == (3, SMALL.horizon, 4)

    def test_short_final_horizon(self):
        p = init_params(SMALL, 7, 5)
        past, fut, _ = sample(SMALL, 7, 5)
        pred, _ = base_forward(p, SMALL, past, fut[:, :2])
        assert pred.shape == (2, 2, 4)

    def test_shape_mismatch_errors(self):
        p = init_params(SMALL, 7, 5)
        past, fut, _ = sample(SMALL, 7, 5)
        with pytest.raises(ForecastError):
            base_forward(p, SMALL, past[:, :5], fut)

    def test_batch_permutation_equivariance(self):
        p = init_params(SMALL, 7, 5)
        past, fut, _ = sample(SMALL, 7, 5, B=4, seed=3)
        pred, _ = base_forward(p, SMALL, past, fut)
        perm = [2, 0, 3, 1]
        pred_p, _ = base_forward(p, SMALL, past[perm], fut[perm])
        assert np.allclose(pred_p, pred[perm])

    def test_equal_logits_give_uniform_attention(self):
        rng = np.random.default_rng(0)
        d, heads, W = 8, 2, 6
        p = {"a.Wq": np.zeros((d, d)), "a.bq": np.zeros(d),
             "a.Wk": np.zeros((d, d)), "a.bk": np.zeros(d),
             "a.Wv": rng.normal(size=(d, d)), "a.bv": np.zeros(d),
             "a.Wo": rng.normal(size=(d, d)), "a.bo": np.zeros(d)}
        x = rng.normal(size=(1, W, d))
        _, cache = attention_fwd(x, x, p, "a", heads)
        attn = cache[7]
        assert np.allclose(attn, 1.0 / W)

    def test_zero_residual_projection_means_corrected_equals_base(self):
        p = init_params(SMALL, 7, 5, zero_residual=True)
        past, fut, _ = sample(SMALL, 7, 5)
        corr, base, _ = corrected_forward(p, SMALL, past, fut)
        assert np.array_equal(corr, base)

    def test_positional_encoding_values(self):
        pe = sinusoidal_encoding(4, 6)
        assert pe.shape == (4, 6)
        assert pe[0, 0] == 0.0 and pe[0, 1] == 1.0
        assert pe[1, 0] == pytest.approx(np.sin(1.0))


class TestGradients:
    def test_fresh_model_passes_gradcheck(self):
        p = init_params(SMALL, 7, 5, seed=11, zero_residual=False)
        past, fut, tgt = sample(SMALL, 7, 5, B=1, seed=5)
        err = grad_check(p, SMALL, past, fut, tgt, n_params=150, seed=2)
        assert err < 1e-4

    def test_linear_head_nearly_exact(self):
        p = init_params(SMALL, 7, 5, seed=1, zero_residual=False)
        past, fut, tgt = sample(SMALL, 7, 5, B=1, seed=6)
        err = grad_check(p, SMALL, past, fut, tgt, n_params=p["head.W"].size + 4,
                         seed=3, param_filter=lambda k: k.startswith("head."))
        assert err < 1e-7

    def test_zero_input_embedding_bias_gradients(self):
        p = init_params(SMALL, 7, 5, seed=2, zero_residual=False)
        past = np.zeros((1, SMALL.window, 7))
        fut = np.zeros((1, SMALL.horizon, 5))
        tgt = np.random.default_rng(4).random((1, SMALL.horizon, 4))
        err = grad_check(p, SMALL, past, fut, tgt, n_params=32, seed=4,
                         param_filter=lambda k: k in ("enc_embed.b", "dec_embed.b"))
        assert err < 1e-4

    def test_gradcheck_across_seeds_is_stable(self):
        for seed in range(3):
            p = init_params(SMALL, 6, 4, seed=seed, zero_residual=False)
            past, fut, tgt = sample(SMALL, 6, 4, B=1, seed=seed + 50)
            assert grad_check(p, SMALL, past, fut, tgt, n_params=60, seed=seed) < 1e-4


class TestLoss:
    def test_mse_and_gradient(self):
        pred = np.array([[[1.0, 2.0]]])
        tgt = np.array([[[0.0, 0.0]]])
        loss, dpred = mse_loss(pred, tgt)
        assert loss == pytest.approx(2.5)
        assert np.allclose(dpred, [[[1.0, 2.0]]])
