"""Training loops for the forecaster family.

Four fitted variants share one parameter layout:
  nar      - base model trained on ground-truth history windows
  nar_gru  - nar base plus a GRU residual fitted on its rollout errors
  ar       - base fine-tuned on its own rolled-out predictions
             (fed-back values carry no gradient)
  ar_gru   - ar base plus a GRU residual fitted on its rollout errors
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..preprocess import CleanDataset, PipelineStats
from ..schema import FeatureSchema, encode_trip
from .layers import Adam
from .model import (
    ForecastConfig,
    base_backward,
    base_forward,
    base_param_names,
    clone_params,
    mse_loss,
    residual_backward,
    residual_forward,
    residual_param_names,
    zero_grads,
)
from .rollout import block_spans, make_rollout_state, rollout_trips, write_predictions


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class WindowSet:
    past: np.ndarray     # [N, W, F]
    fut: np.ndarray      # [N, H, K]
    target: np.ndarray   # [N, H, 4]

    def __len__(self) -> int:
        return len(self.past)


def make_windows(trips: list, schema: FeatureSchema, cfg: ForecastConfig) -> WindowSet:
    """Stride-1 training windows; trips shorter than W + H contribute none,
    and no window ever spans a trip boundary."""
    from numpy.lib.stride_tricks import sliding_window_view

    W, H = cfg.window, cfg.horizon
    pasts, futs, targets = [], [], []
    for ct in trips:
        tensors = encode_trip(ct, schema)
        T = len(tensors["dyn"])
        n = T - W - H + 1
        if n <= 0:
            continue
        full = np.concatenate([tensors["dyn"], tensors["der"], tensors["cov"]], axis=1)
        pw = sliding_window_view(full, W, axis=0).transpose(0, 2, 1)
        pasts.append(pw[:n])
        fw = sliding_window_view(tensors["cov"], H, axis=0).transpose(0, 2, 1)
        futs.append(fw[W - 1:W - 1 + n])
        tw = sliding_window_view(tensors["dyn"], H, axis=0).transpose(0, 2, 1)
        targets.append(tw[W:W + n])
    if not pasts:
        return WindowSet(past=np.zeros((0, W, 0)), fut=np.zeros((0, H, 0)),
                         target=np.zeros((0, H, 4)))
    return WindowSet(past=np.ascontiguousarray(np.concatenate(pasts)),
                     fut=np.ascontiguousarray(np.concatenate(futs)),
                     target=np.ascontiguousarray(np.concatenate(targets)))


def _check_finite(loss: float, where: str) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at {where}")


def _eval_nar_loss(params: dict, cfg: ForecastConfig, ws: WindowSet,
                   batch: int = 512) -> float:
    total, count = 0.0, 0
    for i in range(0, len(ws), batch):
        pred, _ = base_forward(params, cfg, ws.past[i:i + batch], ws.fut[i:i + batch])
        diff = pred - ws.target[i:i + batch]
        total += float((diff * diff).sum())
        count += diff.size
    return total / max(count, 1)


def train_base_nar(params: dict, cfg: ForecastConfig, train: WindowSet,
                   val: WindowSet, *, epochs: int | None = None,
                   log=None) -> dict:
    """Minibatch Adam on ground-truth windows with early stopping on the
    validation loss (patience from the config); restores the best weights."""
    epochs = cfg.epochs if epochs is None else epochs
    names = base_param_names(params)
    opt = Adam({k: params[k] for k in names}, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = {"train": [], "val": []}
    best_val = _eval_nar_loss(params, cfg, val) if len(val) else np.inf
    best_params = {k: params[k].copy() for k in names}
    since_best = 0

    for epoch in range(epochs):
        order = rng.permutation(len(train))
        epoch_loss, n_batches = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            pred, caches = base_forward(params, cfg, train.past[idx], train.fut[idx])
            loss, dpred = mse_loss(pred, train.target[idx])
            _check_finite(loss, f"nar epoch {epoch} batch {n_batches}")
            grads = zero_grads(params)
            base_backward(params, cfg, dpred, caches, grads)
            opt.step({k: params[k] for k in names}, grads)
            epoch_loss += loss
            n_batches += 1
        val_loss = _eval_nar_loss(params, cfg, val) if len(val) else epoch_loss / max(n_batches, 1)
        history["train"].append(epoch_loss / max(n_batches, 1))
        history["val"].append(val_loss)
        if log:
            log(f"nar epoch {epoch}: train {history['train'][-1]:.6f} val {val_loss:.6f}")
        if val_loss < best_val - 1e-12:
            best_val, since_best = val_loss, 0
            best_params = {k: params[k].copy() for k in names}
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best_params is not None:
        for k, v in best_params.items():
            params[k] = v
    return history


def _ar_val_loss(params: dict, cfg: ForecastConfig, val_trips: list,
                 schema: FeatureSchema, stats: PipelineStats) -> float:
    states = [make_rollout_state(ct, schema, stats) for ct in val_trips]
    usable = [s for s in states if len(s) > cfg.window]

    def predict(past, fut):
        return base_forward(params, cfg, past, fut)[0]

    preds = rollout_trips(usable, predict, cfg, schema, stats, mode="ar")
    num, den = 0.0, 0
    for st, pr in zip(usable, preds):
        diff = pr - st.truth_dyn[cfg.window:]
        num += float((diff * diff).sum())
        den += diff.size
    return num / max(den, 1)


def fine_tune_ar(params: dict, cfg: ForecastConfig, train_trips: list,
                 val_trips: list, schema: FeatureSchema, stats: PipelineStats,
                 *, epochs: int | None = None, trip_batch: int = 16,
                 log=None) -> dict:
    """Roll the model forward through each trip in horizon blocks, feeding
    its own clipped predictions back as inputs (no gradient through the
    fed-back values) and descending on the per-block prediction error."""
    epochs = cfg.ar_epochs if epochs is None else epochs
    names = base_param_names(params)
    opt = Adam({k: params[k] for k in names}, lr=cfg.lr * 0.5)
    rng = np.random.default_rng(cfg.seed + 1)
    history = {"train": [], "val": []}
    best_val = _ar_val_loss(params, cfg, val_trips, schema, stats) if val_trips else np.inf
    best_params = {k: params[k].copy() for k in names}
    since_best = 0
    train_trips = [ct for ct in train_trips if len(ct) > cfg.window]
    W, H = cfg.window, cfg.horizon

    for epoch in range(epochs):
        order = rng.permutation(len(train_trips))
        epoch_loss, n_terms = 0.0, 0
        for bi in range(0, len(order), trip_batch):
            batch = [train_trips[j] for j in order[bi:bi + trip_batch]]
            states = [make_rollout_state(ct, schema, stats) for ct in batch]
            spans = [block_spans(len(st), W, H) for st in states]
            grads = zero_grads(params)
            batch_loss, batch_terms = 0.0, 0
            for b in range(max(len(s) for s in spans)):
                active = [i for i in range(len(states)) if b < len(spans[i])]
                by_h: dict = {}
                for i in active:
                    by_h.setdefault(spans[i][b][1], []).append(i)
                for h, idxs in sorted(by_h.items()):
                    pasts, futs, targets = [], [], []
                    for i in idxs:
                        s, _ = spans[i][b]
                        t = states[i].tensors
                        pasts.append(np.concatenate(
                            [t["dyn"][s:s + W], t["der"][s:s + W], t["cov"][s:s + W]], axis=1))
                        futs.append(t["cov"][s + W - 1:s + W - 1 + h])
                        targets.append(states[i].truth_dyn[s + W:s + W + h])
                    pred, caches = base_forward(params, cfg, np.stack(pasts), np.stack(futs))
                    loss, dpred = mse_loss(pred, np.stack(targets))
                    _check_finite(loss, f"ar epoch {epoch} block {b}")
                    base_backward(params, cfg, dpred, caches, grads)
                    batch_loss += loss
                    batch_terms += 1
                    clipped = np.clip(pred, 0.0, 1.0)
                    for j, i in enumerate(idxs):
                        s, _ = spans[i][b]
                        write_predictions(states[i], schema, stats, s + W, clipped[j])
            for k in grads:
                grads[k] /= max(batch_terms, 1)
            opt.step({k: params[k] for k in names}, grads)
            epoch_loss += batch_loss
            n_terms += batch_terms
        val_loss = (_ar_val_loss(params, cfg, val_trips, schema, stats)
                    if val_trips else epoch_loss / max(n_terms, 1))
        history["train"].append(epoch_loss / max(n_terms, 1))
        history["val"].append(val_loss)
        if log:
            log(f"ar epoch {epoch}: train {history['train'][-1]:.6f} val {val_loss:.6f}")
        if val_loss < best_val - 1e-12:
            best_val, since_best = val_loss, 0
            best_params = {k: params[k].copy() for k in names}
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best_params is not None:
        for k, v in best_params.items():
            params[k] = v
    return history


def collect_rollout_blocks(params: dict, cfg: ForecastConfig, trips: list,
                           schema: FeatureSchema, stats: PipelineStats) -> WindowSet:
    """Run frozen-base AR rollouts and capture (base prediction, future
    covariates, truth) for every full-horizon block; the residual trainer
    fits on exactly the inputs it will see at deployment."""
    states = [make_rollout_state(ct, schema, stats) for ct in trips if len(ct) > cfg.window]
    captured = {"pred": [], "fut": [], "target": []}
    W, H = cfg.window, cfg.horizon
    spans = [block_spans(len(st), W, H) for st in states]

    for b in range(max((len(s) for s in spans), default=0)):
        active = [i for i in range(len(states)) if b < len(spans[i])]
        by_h: dict = {}
        for i in active:
            by_h.setdefault(spans[i][b][1], []).append(i)
        for h, idxs in sorted(by_h.items()):
            pasts, futs = [], []
            for i in idxs:
                s, _ = spans[i][b]
                t = states[i].tensors
                pasts.append(np.concatenate(
                    [t["dyn"][s:s + W], t["der"][s:s + W], t["cov"][s:s + W]], axis=1))
                futs.append(t["cov"][s + W - 1:s + W - 1 + h])
            pred, _ = base_forward(params, cfg, np.stack(pasts), np.stack(futs))
            clipped = np.clip(pred, 0.0, 1.0)
            for j, i in enumerate(idxs):
                s, _ = spans[i][b]
                if h == H:
                    captured["pred"].append(pred[j])
                    captured["fut"].append(futs[j])
                    captured["target"].append(states[i].truth_dyn[s + W:s + W + h])
                write_predictions(states[i], schema, stats, s + W, clipped[j])
    if not captured["pred"]:
        k = states[0].tensors["cov"].shape[1] if states else 0
        return WindowSet(past=np.zeros((0, H, 4)), fut=np.zeros((0, H, k)),
                         target=np.zeros((0, H, 4)))
    return WindowSet(past=np.stack(captured["pred"]), fut=np.stack(captured["fut"]),
                     target=np.stack(captured["target"]))


def _eval_residual_loss(params: dict, blocks: WindowSet, batch: int = 1024) -> float:
    total, count = 0.0, 0
    for i in range(0, len(blocks), batch):
        base_pred = blocks.past[i:i + batch]
        res, _ = residual_forward(params, base_pred, blocks.fut[i:i + batch])
        diff = base_pred + res - blocks.target[i:i + batch]
        total += float((diff * diff).sum())
        count += diff.size
    return total / max(count, 1)


def fit_residual(params: dict, cfg: ForecastConfig, train_blocks: WindowSet,
                 val_blocks: WindowSet, *, epochs: int | None = None,
                 log=None) -> dict:
    """Fit the GRU corrector on frozen-base rollout errors. The output
    projection starts at zero, so the monitored best can never be worse
    than the uncorrected base."""
    epochs = cfg.gru_epochs if epochs is None else epochs
    names = residual_param_names(params)
    params["res.out.W"] = np.zeros_like(params["res.out.W"])
    params["res.out.b"] = np.zeros_like(params["res.out.b"])
    opt = Adam({k: params[k] for k in names}, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 2)
    history = {"train": [], "val": []}
    monitor = val_blocks if len(val_blocks) else train_blocks
    best_val = _eval_residual_loss(params, monitor)
    best_params = {k: params[k].copy() for k in names}
    since_best = 0

    for epoch in range(epochs):
        order = rng.permutation(len(train_blocks))
        epoch_loss, n_batches = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            base_pred = train_blocks.past[idx]
            res, caches = residual_forward(params, base_pred, train_blocks.fut[idx])
            loss, dcorr = mse_loss(base_pred + res, train_blocks.target[idx])
            _check_finite(loss, f"residual epoch {epoch} batch {n_batches}")
            grads = zero_grads(params)
            residual_backward(params, dcorr, caches, grads)
            opt.step({k: params[k] for k in names}, grads)
            epoch_loss += loss
            n_batches += 1
        val_loss = _eval_residual_loss(params, monitor)
        history["train"].append(epoch_loss / max(n_batches, 1))
        history["val"].append(val_loss)
        if log:
            log(f"residual epoch {epoch}: train {history['train'][-1]:.6f} val {val_loss:.6f}")
        if val_loss < best_val - 1e-12:
            best_val, since_best = val_loss, 0
            best_params = {k: params[k].copy() for k in names}
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    for k, v in best_params.items():
        params[k] = v
    return history


def train_family(clean: CleanDataset, schema: FeatureSchema, cfg: ForecastConfig,
                 *, variants: tuple = ("nar", "nar_gru", "ar", "ar_gru"),
                 log=None) -> dict:
    """Train the requested variants and return {variant: params}."""
    from ..preprocess import PreprocessError

    train_trips = clean.split_trips("train")
    val_trips = [ct for ct in clean.split_trips("val") if len(ct) > cfg.window]
    if not train_trips:
        raise PreprocessError("no training trips")
    stats = clean.stats
    train_ws = make_windows(train_trips, schema, cfg)
    val_ws = make_windows(val_trips, schema, cfg)

    past_dim = train_ws.past.shape[2]
    cov_dim = train_ws.fut.shape[2]
    from .model import init_params

    out = {}
    nar = init_params(cfg, past_dim, cov_dim)
    if log:
        log(f"training NAR base on {len(train_ws)} windows "
            f"(past_dim {past_dim}, cov_dim {cov_dim})")
    train_base_nar(nar, cfg, train_ws, val_ws, log=log)
    if "nar" in variants or "nar_gru" in variants:
        out["nar"] = clone_params(nar)
    if "nar_gru" in variants:
        blocks_tr = collect_rollout_blocks(nar, cfg, train_trips, schema, stats)
        blocks_va = collect_rollout_blocks(nar, cfg, val_trips, schema, stats)
        gru = clone_params(nar)
        fit_residual(gru, cfg, blocks_tr, blocks_va, log=log)
        out["nar_gru"] = gru
    if "ar" in variants or "ar_gru" in variants:
        ar = clone_params(nar)
        if log:
            log(f"AR fine-tuning on {len(train_trips)} trips")
        fine_tune_ar(ar, cfg, train_trips, val_trips, schema, stats, log=log)
        out["ar"] = ar
        if "ar_gru" in variants:
            blocks_tr = collect_rollout_blocks(ar, cfg, train_trips, schema, stats)
            blocks_va = collect_rollout_blocks(ar, cfg, val_trips, schema, stats)
            gru = clone_params(ar)
            fit_residual(gru, cfg, blocks_tr, blocks_va, log=log)
            out["ar_gru"] = gru
    return out
