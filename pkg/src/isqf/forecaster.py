"""Desk-scale multi-horizon probabilistic forecaster.

A small MLP encoder maps a standardized context window (plus optional
covariates) to a state vector; per-horizon MLP decoders produce the feature
vector for one monotone quantile head per horizon (seq2seq mode), or a single
shared decoder/head consumes the previous value autoregressively (ar mode).
Training minimizes the mean closed-form CRPS over series and horizons.

Targets are standardized per context window (mean/std of the window, 1e-8
guard) and predictions are mapped back; covariates are standardized with
panel-level statistics stored on the model. AR training teacher-forces the
previous ground-truth value; free-running feedback happens only in
``sample_paths``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .head import (
    DivergenceError,
    HeadConfig,
    SgdConfig,
    crps_loss_and_grads,
    decode_batch,
    eval_decoded_quantiles,
    init_head_params,
)

__all__ = [
    "SeriesPanel",
    "TrainingSplit",
    "ForecastConfig",
    "ForecastModel",
    "new_model",
    "make_training_split",
    "train",
    "predict_quantiles",
    "sample_paths",
    "seasonal_naive",
    "save_model",
    "load_model",
]

STD_EPS = 1e-8


@dataclass(frozen=True)
class SeriesPanel:
    """m related series with a shared horizon.

    ``targets`` is (m, T); ``covariates``, when given, is (m, T + horizon,
    n_cov): known covariates extend one horizon past the targets. Missing
    early history may be NaN-padded on the left.
    """

    targets: np.ndarray
    horizon: int
    covariates: Optional[np.ndarray] = None
    context: Optional[int] = None

    def __post_init__(self):
        z = np.asarray(self.targets, dtype=float)
        if z.ndim != 2:
            raise ValueError("targets must be (m, T)")
        m, T = z.shape
        if not (T > self.horizon >= 1):
            raise ValueError("need T > horizon >= 1")
        object.__setattr__(self, "targets", z)
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim != 3 or cov.shape[0] != m or cov.shape[1] != T + self.horizon:
                raise ValueError(
                    "covariates must be (m, T + horizon, n_cov), got %s" % (cov.shape,)
                )
            object.__setattr__(self, "covariates", cov)
        ctx = self.context if self.context is not None else 2 * self.horizon
        if ctx < 1:
            raise ValueError("context must be positive")
        object.__setattr__(self, "context", int(ctx))

    @property
    def m(self) -> int:
        return self.targets.shape[0]

    @property
    def length(self) -> int:
        return self.targets.shape[1]

    @property
    def n_cov(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[2]


@dataclass
class TrainingSplit:
    """Raw training windows: context blocks and their next-horizon targets."""

    context: np.ndarray  # (N, C)
    targets: np.ndarray  # (N, tau)
    cov_context: Optional[np.ndarray]  # (N, C, n_cov)
    cov_future: Optional[np.ndarray]  # (N, tau, n_cov)
    series: np.ndarray  # (N,)

    @property
    def n(self) -> int:
        return self.targets.shape[0]


def make_training_split(panel: SeriesPanel, extra_windows: int = 0, stride: int = 1) -> TrainingSplit:
    """Windows whose context ends at T - horizon, targets are the last horizon.

    ``extra_windows`` adds earlier windows (rolling augmentation) shifted by
    ``stride``. Series whose finite history cannot fill even one window are
    skipped with a warning.
    """
    C, tau = panel.context, panel.horizon
    m, T = panel.targets.shape
    if T < C + tau:
        raise ValueError("series length %d is below context + horizon = %d" % (T, C + tau))
    ends = [T - tau - s * stride for s in range(extra_windows + 1)]
    ends = [e for e in ends if e >= C]
    ctx_rows, tgt_rows, covc_rows, covf_rows, series = [], [], [], [], []
    for i in range(m):
        kept = 0
        for end in ends:
            block = panel.targets[i, end - C : end + tau]
            if not np.all(np.isfinite(block)):
                continue
            ctx_rows.append(panel.targets[i, end - C : end])
            tgt_rows.append(panel.targets[i, end : end + tau])
            if panel.covariates is not None:
                covc_rows.append(panel.covariates[i, end - C : end])
                covf_rows.append(panel.covariates[i, end : end + tau])
            series.append(i)
            kept += 1
        if kept == 0:
            warnings.warn(
                "series %d skipped: finite history shorter than context + horizon = %d"
                % (i, C + tau),
                stacklevel=2,
            )
    if not ctx_rows:
        raise ValueError("no usable training windows")
    return TrainingSplit(
        context=np.stack(ctx_rows),
        targets=np.stack(tgt_rows),
        cov_context=np.stack(covc_rows) if covc_rows else None,
        cov_future=np.stack(covf_rows) if covf_rows else None,
        series=np.asarray(series, dtype=int),
    )


@dataclass(frozen=True)
class ForecastConfig:
    horizon: int
    levels: Tuple[float, ...]
    context: Optional[int] = None
    mode: str = "seq2seq"
    head_mode: str = "isqf"
    spline_pieces: int = 3
    tail: str = "exp"
    n_cov: int = 0
    enc_hidden: int = 32
    state_dim: int = 16
    dec_hidden: int = 16
    head_dim: int = 8
    head_hidden: int = 16

    def __post_init__(self):
        if self.mode not in ("seq2seq", "ar"):
            raise ValueError("mode must be 'seq2seq' or 'ar'")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        ctx = self.context if self.context is not None else 2 * self.horizon
        if ctx < 1:
            raise ValueError("context must be positive")
        object.__setattr__(self, "context", int(ctx))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        self.head_config()  # validates levels / head fields

    def head_config(self) -> HeadConfig:
        return HeadConfig(
            levels=self.levels,
            in_dim=self.head_dim,
            mode=self.head_mode,
            spline_pieces=self.spline_pieces,
            tail=self.tail,
            hidden=self.head_hidden,
        )

    @property
    def enc_in(self) -> int:
        return self.context * (1 + self.n_cov)

    @property
    def dec_in(self) -> int:
        if self.mode == "seq2seq":
            return self.state_dim + self.n_cov
        # state, previous value, covariates, horizon position
        return self.state_dim + 1 + self.n_cov + 1

    @property
    def n_heads(self) -> int:
        return self.horizon if self.mode == "seq2seq" else 1


@dataclass
class ForecastModel:
    config: ForecastConfig
    params: Dict[str, np.ndarray]  # encoder and decoder blocks
    heads: List[Dict[str, np.ndarray]]  # one per horizon, or one shared (ar)
    cov_mean: Optional[np.ndarray] = None
    cov_std: Optional[np.ndarray] = None

    def blocks(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view over every trainable block."""
        flat = dict(self.params)
        for t, head in enumerate(self.heads):
            for name, arr in head.items():
                flat["head.%d.%s" % (t, name)] = arr
        return flat


def new_model(config: ForecastConfig, seed: int = 0) -> ForecastModel:
    rng = np.random.default_rng(seed)
    cfg = config

    def lin(rows, cols):
        return rng.normal(0.0, 1.0 / math.sqrt(max(cols, 1)), (rows, cols))

    params = {
        "enc.w1": lin(cfg.enc_hidden, cfg.enc_in),
        "enc.b1": np.zeros(cfg.enc_hidden),
        "enc.w2": lin(cfg.state_dim, cfg.enc_hidden),
        "enc.b2": np.zeros(cfg.state_dim),
    }
    n_dec = cfg.horizon if cfg.mode == "seq2seq" else 1
    params["dec.w1"] = np.stack([lin(cfg.dec_hidden, cfg.dec_in) for _ in range(n_dec)])
    params["dec.b1"] = np.zeros((n_dec, cfg.dec_hidden))
    params["dec.w2"] = np.stack([lin(cfg.head_dim, cfg.dec_hidden) for _ in range(n_dec)])
    params["dec.b2"] = np.zeros((n_dec, cfg.head_dim))
    head_cfg = cfg.head_config()
    heads = [init_head_params(head_cfg, seed=seed + 1 + t) for t in range(cfg.n_heads)]
    return ForecastModel(config=cfg, params=params, heads=heads)


# ---------------------------------------------------------------------------
# forward/backward plumbing
# ---------------------------------------------------------------------------


def _standardize_context(ctx: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = ctx.mean(axis=1)
    scale = ctx.std(axis=1) + STD_EPS
    return (ctx - mu[:, None]) / scale[:, None], mu, scale


def _std_cov(model: ForecastModel, cov: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if cov is None:
        return None
    if model.cov_mean is None:
        raise ValueError("model has no covariate statistics; was it trained with covariates?")
    return (cov - model.cov_mean) / model.cov_std


def _encoder_input(ctx_std: np.ndarray, cov_ctx_std: Optional[np.ndarray]) -> np.ndarray:
    if cov_ctx_std is None:
        return ctx_std
    B = ctx_std.shape[0]
    return np.concatenate([ctx_std, cov_ctx_std.reshape(B, -1)], axis=1)


def _mlp(x, w1, b1, w2, b2):
    hid = np.tanh(x @ w1.T + b1)
    return hid @ w2.T + b2, hid


def _mlp_back(x, hid, w1, w2, g_out):
    g_w2 = g_out.T @ hid
    g_b2 = g_out.sum(axis=0)
    g_hid = (g_out @ w2) * (1.0 - hid * hid)
    g_w1 = g_hid.T @ x
    g_b1 = g_hid.sum(axis=0)
    g_x = g_hid @ w1
    return g_w1, g_b1, g_w2, g_b2, g_x


def _decoder_input(model, e, cov_fut_std, t, prev=None):
    cfg = model.config
    parts = [e]
    if cfg.mode == "ar":
        parts.append(prev[:, None])
    if cov_fut_std is not None:
        parts.append(cov_fut_std[:, t, :])
    if cfg.mode == "ar":
        parts.append(np.full((e.shape[0], 1), (t + 1) / cfg.horizon))
    return np.concatenate(parts, axis=1)


def _batch_loss_grads(
    model: ForecastModel,
    ctx: np.ndarray,
    cov_ctx: Optional[np.ndarray],
    cov_fut: Optional[np.ndarray],
    targets: np.ndarray,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean CRPS over the batch and horizons, with gradients for blocks()."""
    cfg = model.config
    tau = cfg.horizon
    head_cfg = cfg.head_config()
    ctx_std, mu, scale = _standardize_context(ctx)
    z_std = (targets - mu[:, None]) / scale[:, None]
    cov_ctx_std = _std_cov(model, cov_ctx)
    cov_fut_std = _std_cov(model, cov_fut)

    x_enc = _encoder_input(ctx_std, cov_ctx_std)
    e, enc_hid = _mlp(x_enc, model.params["enc.w1"], model.params["enc.b1"],
                      model.params["enc.w2"], model.params["enc.b2"])

    grads = {name: np.zeros_like(arr) for name, arr in model.blocks().items()}
    g_e = np.zeros_like(e)
    loss_sum = 0.0
    E = cfg.state_dim
    for t in range(tau):
        dec_idx = t if cfg.mode == "seq2seq" else 0
        prev = None
        if cfg.mode == "ar":
            prev = ctx_std[:, -1] if t == 0 else z_std[:, t - 1]
        din = _decoder_input(model, e, cov_fut_std, t, prev)
        h, dhid = _mlp(din, model.params["dec.w1"][dec_idx], model.params["dec.b1"][dec_idx],
                       model.params["dec.w2"][dec_idx], model.params["dec.b2"][dec_idx])
        head = model.heads[dec_idx]
        lt, hgrads, g_h = crps_loss_and_grads(head, h, z_std[:, t], head_cfg)
        loss_sum += lt
        for name, g in hgrads.items():
            grads["head.%d.%s" % (dec_idx, name)] += g
        gw1, gb1, gw2, gb2, g_din = _mlp_back(
            din, dhid, model.params["dec.w1"][dec_idx], model.params["dec.w2"][dec_idx], g_h
        )
        grads["dec.w1"][dec_idx] += gw1
        grads["dec.b1"][dec_idx] += gb1
        grads["dec.w2"][dec_idx] += gw2
        grads["dec.b2"][dec_idx] += gb2
        g_e += g_din[:, :E]

    gw1, gb1, gw2, gb2, _ = _mlp_back(
        x_enc, enc_hid, model.params["enc.w1"], model.params["enc.w2"], g_e
    )
    grads["enc.w1"] += gw1
    grads["enc.b1"] += gb1
    grads["enc.w2"] += gw2
    grads["enc.b2"] += gb2

    inv = 1.0 / tau
    for name in grads:
        grads[name] *= inv
    return loss_sum * inv, grads


def train(
    model: ForecastModel,
    panel: SeriesPanel,
    opt: Optional[SgdConfig] = None,
    seed: int = 0,
    extra_windows: int = 0,
    stride: int = 1,
) -> Tuple[ForecastModel, List[float]]:
    """Momentum SGD on mean CRPS across series and horizons.

    Deterministic under the seed; aborts with the offending block name on a
    non-finite loss or parameter.
    """
    cfg = model.config
    if panel.horizon != cfg.horizon:
        raise ValueError("panel horizon %d != model horizon %d" % (panel.horizon, cfg.horizon))
    if panel.context != cfg.context:
        raise ValueError("panel context %d != model context %d" % (panel.context, cfg.context))
    if panel.n_cov != cfg.n_cov:
        raise ValueError("panel has %d covariates, model expects %d" % (panel.n_cov, cfg.n_cov))
    if panel.covariates is not None:
        flat = panel.covariates.reshape(-1, panel.n_cov)
        ok = np.all(np.isfinite(flat), axis=1)
        model.cov_mean = flat[ok].mean(axis=0)
        model.cov_std = flat[ok].std(axis=0) + STD_EPS

    split = make_training_split(panel, extra_windows=extra_windows, stride=stride)
    opt = opt or SgdConfig()
    rng = np.random.default_rng(seed)
    blocks = model.blocks()
    vel = {name: np.zeros_like(arr) for name, arr in blocks.items()}
    losses: List[float] = []
    n = split.n
    for epoch in range(opt.epochs):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            loss, grads = _batch_loss_grads(
                model,
                split.context[idx],
                None if split.cov_context is None else split.cov_context[idx],
                None if split.cov_future is None else split.cov_future[idx],
                split.targets[idx],
            )
            if not math.isfinite(loss):
                bad = _first_bad(grads) or _first_bad(blocks) or "loss"
                raise DivergenceError(
                    "non-finite loss at epoch %d (block %r)" % (epoch, bad), bad, epoch
                )
            for name, arr in blocks.items():
                vel[name] = opt.momentum * vel[name] - opt.step * grads[name]
                arr += vel[name]
            bad = _first_bad(blocks)
            if bad is not None:
                raise DivergenceError(
                    "non-finite parameters at epoch %d (block %r)" % (epoch, bad), bad, epoch
                )
            acc += loss * idx.size
        losses.append(acc / n)
    return model, losses


def _first_bad(d: Dict[str, np.ndarray]) -> Optional[str]:
    for name in sorted(d):
        if not np.all(np.isfinite(d[name])):
            return name
    return None


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _check_inference_input(model, context, covariates):
    cfg = model.config
    ctx = np.asarray(context, dtype=float).reshape(-1)
    if ctx.shape[0] != cfg.context:
        raise ValueError("context window must have length %d, got %d" % (cfg.context, ctx.size))
    if not np.all(np.isfinite(ctx)):
        raise ValueError("context window contains non-finite values")
    cov = None
    if cfg.n_cov:
        if covariates is None:
            raise ValueError("model expects covariates of shape (context + horizon, %d)" % cfg.n_cov)
        cov = np.asarray(covariates, dtype=float)
        if cov.shape != (cfg.context + cfg.horizon, cfg.n_cov):
            raise ValueError(
                "covariates must be (context + horizon, n_cov) = (%d, %d), got %s"
                % (cfg.context + cfg.horizon, cfg.n_cov, cov.shape)
            )
    elif covariates is not None:
        raise ValueError("model was trained without covariates")
    return ctx, cov


def _infer_state(model, ctx, cov):
    cfg = model.config
    ctx_std, mu, scale = _standardize_context(ctx[None])
    cov_ctx_std = cov_fut_std = None
    if cov is not None:
        cov_std = _std_cov(model, cov[None])
        cov_ctx_std = cov_std[:, : cfg.context]
        cov_fut_std = cov_std[:, cfg.context :]
    x_enc = _encoder_input(ctx_std, cov_ctx_std)
    e, _ = _mlp(x_enc, model.params["enc.w1"], model.params["enc.b1"],
                model.params["enc.w2"], model.params["enc.b2"])
    return ctx_std, float(mu[0]), float(scale[0]), cov_fut_std, e


def _horizon_features(model, e, cov_fut_std, t, prev=None):
    dec_idx = t if model.config.mode == "seq2seq" else 0
    din = _decoder_input(model, e, cov_fut_std, t, prev)
    h, _ = _mlp(din, model.params["dec.w1"][dec_idx], model.params["dec.b1"][dec_idx],
                model.params["dec.w2"][dec_idx], model.params["dec.b2"][dec_idx])
    return h, model.heads[dec_idx]


def predict_quantiles(
    model: ForecastModel,
    context: np.ndarray,
    levels: Sequence[float],
    covariates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """(horizon, len(levels)) quantile matrix, columns in request order.

    Levels may be arbitrary values in (0, 1), trained on or not. In ar mode
    the curve at each step is conditioned on the median path fed back through
    the decoder (marginals beyond the first step would need path averaging).
    """
    cfg = model.config
    lv = np.asarray(levels, dtype=float).reshape(-1)
    if lv.size == 0 or np.any(lv <= 0.0) or np.any(lv >= 1.0):
        raise ValueError("levels must lie in the open interval (0, 1)")
    ctx, cov = _check_inference_input(model, context, covariates)
    ctx_std, mu, scale, cov_fut_std, e = _infer_state(model, ctx, cov)
    head_cfg = cfg.head_config()
    out = np.empty((cfg.horizon, lv.size))
    prev = ctx_std[:, -1] if cfg.mode == "ar" else None
    for t in range(cfg.horizon):
        h, head = _horizon_features(model, e, cov_fut_std, t, prev)
        dec = decode_batch(head, h, head_cfg)
        out[t] = eval_decoded_quantiles(dec, lv[None, :])[0]
        if cfg.mode == "ar":
            prev = eval_decoded_quantiles(dec, np.array([[0.5]]))[:, 0]
    return out * scale + mu


def sample_paths(
    model: ForecastModel,
    context: np.ndarray,
    n_paths: int,
    seed: int = 0,
    mode: Optional[str] = None,
    covariates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """(n_paths, horizon) sample paths.

    seq2seq: one uniform level per path shared across horizons, so paths
    never cross. ar: a fresh uniform level per step, each sampled value fed
    back as the next decoder input.
    """
    cfg = model.config
    mode = mode or cfg.mode
    if mode != cfg.mode:
        raise ValueError("model was trained in %r mode, cannot sample in %r mode" % (cfg.mode, mode))
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    ctx, cov = _check_inference_input(model, context, covariates)
    ctx_std, mu, scale, cov_fut_std, e = _infer_state(model, ctx, cov)
    head_cfg = cfg.head_config()
    rng = np.random.default_rng(seed)
    tiny = np.finfo(float).tiny
    out = np.empty((n_paths, cfg.horizon))
    if mode == "seq2seq":
        alphas = np.clip(rng.uniform(size=n_paths), tiny, 1.0 - 1e-16)
        for t in range(cfg.horizon):
            h, head = _horizon_features(model, e, cov_fut_std, t)
            dec = decode_batch(head, h, head_cfg)
            out[:, t] = eval_decoded_quantiles(dec, alphas[None, :])[0]
    else:
        e_rep = np.repeat(e, n_paths, axis=0)
        cov_rep = None if cov_fut_std is None else np.repeat(cov_fut_std, n_paths, axis=0)
        prev = np.full(n_paths, ctx_std[0, -1])
        for t in range(cfg.horizon):
            h, head = _horizon_features(model, e_rep, cov_rep, t, prev)
            dec = decode_batch(head, h, head_cfg)
            alphas = np.clip(rng.uniform(size=n_paths), tiny, 1.0 - 1e-16)
            prev = eval_decoded_quantiles(dec, alphas)
            out[:, t] = prev
    return out * scale + mu


def seasonal_naive(context: np.ndarray, period: int, horizon: int) -> np.ndarray:
    """Repeat the last observed season: forecast[t] = context[-period + t mod period]."""
    ctx = np.asarray(context, dtype=float).reshape(-1)
    if period < 1 or ctx.size < period:
        raise ValueError("context must cover at least one season")
    season = ctx[-period:]
    return season[np.arange(horizon) % period]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _model_to_doc(model: ForecastModel) -> dict:
    cfg = model.config
    return {
        "format": "quantile-forecaster",
        "version": 1,
        "config": {
            "horizon": cfg.horizon,
            "levels": list(cfg.levels),
            "context": cfg.context,
            "mode": cfg.mode,
            "head_mode": cfg.head_mode,
            "spline_pieces": cfg.spline_pieces,
            "tail": cfg.tail,
            "n_cov": cfg.n_cov,
            "enc_hidden": cfg.enc_hidden,
            "state_dim": cfg.state_dim,
            "dec_hidden": cfg.dec_hidden,
            "head_dim": cfg.head_dim,
            "head_hidden": cfg.head_hidden,
        },
        "cov_mean": None if model.cov_mean is None else model.cov_mean.tolist(),
        "cov_std": None if model.cov_std is None else model.cov_std.tolist(),
        "blocks": [
            {"name": name, "shape": list(arr.shape), "values": arr.ravel(order="C").tolist()}
            for name, arr in model.blocks().items()
        ],
    }


def save_model(model: ForecastModel, path) -> None:
    """JSON checkpoint: config, covariate stats, flat (name, shape, values) blocks."""
    with open(path, "w") as fh:
        json.dump(_model_to_doc(model), fh, allow_nan=False)


def load_model(path) -> ForecastModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "quantile-forecaster":
        raise ValueError("not a forecaster checkpoint")
    c = doc["config"]
    cfg = ForecastConfig(
        horizon=c["horizon"],
        levels=tuple(c["levels"]),
        context=c["context"],
        mode=c["mode"],
        head_mode=c["head_mode"],
        spline_pieces=c["spline_pieces"],
        tail=c["tail"],
        n_cov=c["n_cov"],
        enc_hidden=c["enc_hidden"],
        state_dim=c["state_dim"],
        dec_hidden=c["dec_hidden"],
        head_dim=c["head_dim"],
        head_hidden=c["head_hidden"],
    )
    model = new_model(cfg, seed=0)
    stored = {rec["name"]: rec for rec in doc["blocks"]}
    blocks = model.blocks()
    if set(stored) != set(blocks):
        raise ValueError("checkpoint blocks do not match the model configuration")
    for name, arr in blocks.items():
        rec = stored[name]
        if list(arr.shape) != rec["shape"]:
            raise ValueError("block %r has shape %s, checkpoint has %s" % (name, arr.shape, rec["shape"]))
        arr[...] = np.asarray(rec["values"], dtype=float).reshape(rec["shape"])
    model.cov_mean = None if doc["cov_mean"] is None else np.asarray(doc["cov_mean"], dtype=float)
    model.cov_std = None if doc["cov_std"] is None else np.asarray(doc["cov_std"], dtype=float)
    return model
