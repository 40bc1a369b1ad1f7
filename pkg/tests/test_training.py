import numpy as np
import pytest

from conftest import identity_stats, toy_clean_trip
from ferrytwin.forecast.model import ForecastConfig, clone_params, init_params
from ferrytwin.forecast.training import (
    TrainingDiverged,
    WindowSet,
    _eval_nar_loss,
    _eval_residual_loss,
    collect_rollout_blocks,
    fine_tune_ar,
    fit_residual,
    make_windows,
    train_base_nar,
)
from ferrytwin.schema import FeatureSchema, encode_trip

CFG = ForecastConfig(window=10, horizon=3, d_model=16, n_heads=2, n_layers=1,
                     d_ff=32, gru_hidden=8, batch_size=16, lr=2e-3, patience=10, seed=0)
SCHEMA = FeatureSchema(covariates=("cmd_heading", "cmd_shaft", "wind_speed"), derived=())


def dims():
    t = encode_trip(toy_clean_trip(T=20), SCHEMA)
    return t["dyn"].shape[1] + t["cov"].shape[1], t["cov"].shape[1]


class TestMakeWindows:
    def test_window_count_formula(self):
        trips = [toy_clean_trip(T=100)]
        ws = make_windows(trips, SCHEMA, ForecastConfig(window=25, horizon=5, seed=0))
        assert len(ws) == 100 - 25 - 5 + 1 == 71

    def test_short_trip_contributes_nothing(self):
        ws = make_windows([toy_clean_trip(T=29)],
                          SCHEMA, ForecastConfig(window=25, horizon=5, seed=0))
        assert len(ws) == 0

    def test_windows_never_span_trips(self):
        a = toy_clean_trip(T=20, seed=1)
        b = toy_clean_trip(T=20, seed=2)
        a.frame["fc"] = np.full(20, 0.25)
        b.frame["fc"] = np.full(20, 0.75)
        ws = make_windows([a, b], SCHEMA, CFG)
        fc_past = ws.past[:, :, 0]
        fc_target = ws.target[:, :, 0]
        for i in range(len(ws)):
            vals = set(np.round(np.concatenate([fc_past[i], fc_target[i]]), 6))
            assert vals in ({0.25}, {0.75})

    def test_alignment_of_future_and_target(self):
        ct = toy_clean_trip(T=20, seed=3)
        tensors = encode_trip(ct, SCHEMA)
        ws = make_windows([ct], SCHEMA, CFG)
        W, H = CFG.window, CFG.horizon
        assert np.allclose(ws.past[0], np.concatenate(
            [tensors["dyn"][:W], tensors["der"][:W], tensors["cov"][:W]], axis=1))
        assert np.allclose(ws.fut[0], tensors["cov"][W - 1:W - 1 + H])
        assert np.allclose(ws.target[0], tensors["dyn"][W:W + H])


class TestNarTraining:
    def test_overfits_ten_windows(self):
        trips = [toy_clean_trip(T=24, seed=9)]
        ws = make_windows(trips, SCHEMA, CFG)
        assert len(ws) >= 10
        ws = WindowSet(past=ws.past[:10], fut=ws.fut[:10], target=ws.target[:10])
        F, K = dims()
        overfit_cfg = ForecastConfig(window=10, horizon=3, d_model=16, n_heads=2,
                                     n_layers=1, d_ff=32, gru_hidden=8, batch_size=16,
                                     lr=2e-3, patience=500, seed=0)
        params = init_params(overfit_cfg, F, K, seed=4)
        train_base_nar(params, overfit_cfg, ws, ws, epochs=500)
        assert _eval_nar_loss(params, overfit_cfg, ws) < 1e-3

    def test_seeded_training_is_deterministic(self):
        trips = [toy_clean_trip(T=30, seed=1)]
        ws = make_windows(trips, SCHEMA, CFG)
        F, K = dims()
        runs = []
        for _ in range(2):
            params = init_params(CFG, F, K, seed=4)
            train_base_nar(params, CFG, ws, ws, epochs=3)
            runs.append(params)
        for k in runs[0]:
            assert np.array_equal(runs[0][k], runs[1][k]), k

    def test_val_loss_improves_over_init(self):
        train = [toy_clean_trip(T=40, seed=s) for s in range(3)]
        val = [toy_clean_trip(T=40, seed=9)]
        tws = make_windows(train, SCHEMA, CFG)
        vws = make_windows(val, SCHEMA, CFG)
        F, K = dims()
        params = init_params(CFG, F, K, seed=5)
        before = _eval_nar_loss(params, CFG, vws)
        train_base_nar(params, CFG, tws, vws, epochs=20)
        after = _eval_nar_loss(params, CFG, vws)
        assert after < before

    def test_nan_inputs_abort_with_diagnostic(self):
        trips = [toy_clean_trip(T=30, seed=1)]
        ws = make_windows(trips, SCHEMA, CFG)
        ws.past[0, 0, 0] = np.inf
        F, K = dims()
        params = init_params(CFG, F, K, seed=4)
        with pytest.raises(TrainingDiverged, match="epoch"):
            train_base_nar(params, CFG, ws, ws, epochs=2)


class TestArFineTune:
    def test_ar_loss_improves(self):
        stats = identity_stats()
        train = [toy_clean_trip(T=40, seed=s) for s in range(4)]
        val = [toy_clean_trip(T=40, seed=11)]
        tws = make_windows(train, SCHEMA, CFG)
        F, K = dims()
        params = init_params(CFG, F, K, seed=6)
        train_base_nar(params, CFG, tws, tws, epochs=10)
        from ferrytwin.forecast.training import _ar_val_loss

        before = _ar_val_loss(params, CFG, val, SCHEMA, stats)
        fine_tune_ar(params, CFG, train, val, SCHEMA, stats, epochs=8)
        after = _ar_val_loss(params, CFG, val, SCHEMA, stats)
        assert after <= before

    def test_deterministic(self):
        stats = identity_stats()
        train = [toy_clean_trip(T=30, seed=s) for s in range(2)]
        F, K = dims()
        runs = []
        for _ in range(2):
            params = init_params(CFG, F, K, seed=6)
            fine_tune_ar(params, CFG, train, [], SCHEMA, stats, epochs=2)
            runs.append(params)
        for k in runs[0]:
            assert np.array_equal(runs[0][k], runs[1][k]), k


class TestResidual:
    def test_corrected_never_worse_than_base(self):
        stats = identity_stats()
        trips = [toy_clean_trip(T=40, seed=s) for s in range(3)]
        F, K = dims()
        params = init_params(CFG, F, K, seed=7)
        blocks = collect_rollout_blocks(params, CFG, trips, SCHEMA, stats)
        assert len(blocks) > 0
        base_mse = float(np.mean((blocks.past - blocks.target) ** 2))
        fit_residual(params, CFG, blocks, blocks, epochs=15)
        corrected_mse = _eval_residual_loss(params, blocks)
        assert corrected_mse <= base_mse + 1e-12

    def test_zero_epochs_keeps_zero_residual(self):
        stats = identity_stats()
        trips = [toy_clean_trip(T=30, seed=1)]
        F, K = dims()
        params = init_params(CFG, F, K, seed=8)
        blocks = collect_rollout_blocks(params, CFG, trips, SCHEMA, stats)
        fit_residual(params, CFG, blocks, blocks, epochs=0)
        assert np.all(params["res.out.W"] == 0.0)
