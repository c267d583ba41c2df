"""Monotone quantile output layer.

Maps a feature vector h to a full quantile curve whose knot values are built
by cumulatively adding non-negative increments, so no parameter setting and
no input can produce quantile crossing. The layer is trained by minimizing
the mean closed-form CRPS over (h, z) pairs with hand-written gradients;
``gradient_check`` compares them against central finite differences.

Parameters live in a flat ``{name: ndarray}`` dict:

    base.w (F,), base.b (1,)          linear map for the first knot value
    inc.w1 (K-1, Hd, F), inc.b1 (K-1, Hd),
    inc.w2 (K-1, Hd),    inc.b2 (K-1,)   one small MLP per knot increment
    pos.w (K-1, S, F), pos.b (K-1, S)    spline-mode position logits
    val.w (K-1, S, F), val.b (K-1, S)    spline-mode value increments
    tail.w (2 or 4, F), tail.b (2 or 4,) spline-mode tail pre-activations

Interpolating mode ("iqf") uses straight lines between knots and derives
exponential tail slopes from the two outermost knot pairs; spline mode
("isqf") decodes per-segment knots and trainable tails from h.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels as kernels
from .crps import gpd_tail_crps_grad
from .curves import (
    HALF_EPS,
    ExponentialTail,
    GpdTail,
    IsqfCurve,
    QuantileKnots,
    SplineSegment,
)

__all__ = [
    "HeadConfig",
    "SgdConfig",
    "GradientCheckReport",
    "DivergenceError",
    "init_head_params",
    "decode",
    "decode_batch",
    "eval_decoded_quantiles",
    "empirical_crps_loss",
    "crps_loss_and_grads",
    "gradient_check",
    "fit",
    "params_to_doc",
    "params_from_doc",
    "save_params",
    "load_params",
]

ETA_CAP = 0.499


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss or parameter block."""

    def __init__(self, message: str, block: str, epoch: int):
        super().__init__(message)
        self.block = block
        self.epoch = epoch


@dataclass(frozen=True)
class HeadConfig:
    """Shape and mode of the output layer.

    ``levels`` is the knot grid; ``spline_pieces`` and ``tail`` only matter
    in "isqf" mode ("iqf" interpolates linearly and always uses derived
    exponential tails).
    """

    levels: Tuple[float, ...]
    in_dim: int
    mode: str = "isqf"
    spline_pieces: int = 3
    tail: str = "exp"
    hidden: int = 16
    activation: str = "softplus"
    init_scale: float = 1.0

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size < 2:
            raise ValueError("need at least two quantile levels")
        if np.any(lv <= 0.0) or np.any(lv >= 1.0) or np.any(np.diff(lv) <= 0.0):
            raise ValueError("levels must be strictly increasing inside (0, 1)")
        if self.mode not in ("iqf", "isqf"):
            raise ValueError("mode must be 'iqf' or 'isqf'")
        if self.tail not in ("exp", "gpd"):
            raise ValueError("tail must be 'exp' or 'gpd'")
        if self.mode == "iqf" and self.tail != "exp":
            raise ValueError("iqf mode derives exponential tails; tail='gpd' needs mode='isqf'")
        if self.activation not in ("softplus", "relu"):
            raise ValueError("activation must be 'softplus' or 'relu'")
        if self.in_dim < 1 or self.hidden < 1 or self.spline_pieces < 1:
            raise ValueError("in_dim, hidden and spline_pieces must be positive")
        object.__setattr__(self, "levels", tuple(float(v) for v in lv))

    @property
    def k(self) -> int:
        return len(self.levels)

    @property
    def pieces(self) -> int:
        return self.spline_pieces if self.mode == "isqf" else 1

    def levels_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)


@dataclass
class SgdConfig:
    """Mini-batch gradient descent with momentum."""

    step: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 500


def _softplus(x: np.ndarray) -> np.ndarray:
    # log1p(exp(-|x|)) + max(x, 0) is overflow-safe for large |x|
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def init_head_params(config: HeadConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    """Near-identity start: tiny base, increments about init_scale/K, uniform
    spline knots, unit tail slopes."""
    rng = np.random.default_rng(seed)
    K, F, Hd = config.k, config.in_dim, config.hidden
    scale = 0.1 / math.sqrt(F)
    params: Dict[str, np.ndarray] = {
        "base.w": rng.normal(0.0, scale, F),
        "base.b": np.zeros(1),
        "inc.w1": rng.normal(0.0, scale, (K - 1, Hd, F)),
        "inc.b1": np.zeros((K - 1, Hd)),
        "inc.w2": rng.normal(0.0, 0.1 / math.sqrt(Hd), (K - 1, Hd)),
        "inc.b2": np.full(K - 1, _inv_softplus(max(config.init_scale, 1e-3) / K)),
    }
    if config.mode == "isqf":
        S = config.spline_pieces
        params["pos.w"] = np.zeros((K - 1, S, F))
        params["pos.b"] = np.zeros((K - 1, S))
        params["val.w"] = np.zeros((K - 1, S, F))
        params["val.b"] = np.zeros((K - 1, S))
        if config.tail == "exp":
            params["tail.w"] = np.zeros((2, F))
            params["tail.b"] = np.full(2, _inv_softplus(1.0))
        else:
            # eta starts at 0.2, mu at 1.0
            eta_pre = math.log(0.2 / (ETA_CAP - 0.2))
            params["tail.w"] = np.zeros((4, F))
            params["tail.b"] = np.array([eta_pre, _inv_softplus(1.0), eta_pre, _inv_softplus(1.0)])
    return params


def _check_shapes(params: Dict[str, np.ndarray], config: HeadConfig) -> None:
    ref = init_head_params(config, seed=0)
    if set(params) != set(ref):
        raise ValueError(
            "parameter blocks %s do not match config blocks %s"
            % (sorted(params), sorted(ref))
        )
    for name, arr in ref.items():
        if params[name].shape != arr.shape:
            raise ValueError(
                "block %r has shape %s, config needs %s" % (name, params[name].shape, arr.shape)
            )


@dataclass
class DecodedBatch:
    """Packed curves for a batch of inputs plus forward intermediates."""

    config: HeadConfig
    values: np.ndarray  # (B, K)
    d: np.ndarray  # (B, K-1, S+1)
    p: np.ndarray  # (B, K-1, S+1)
    left: Tuple[np.ndarray, np.ndarray]  # exp: (a, b); gpd: (eta, mu)
    right: Tuple[np.ndarray, np.ndarray]
    cache: dict = field(repr=False, default_factory=dict)

    @property
    def batch(self) -> int:
        return self.values.shape[0]


def decode_batch(params: Dict[str, np.ndarray], H: np.ndarray, config: HeadConfig) -> DecodedBatch:
    """Decode a (B, in_dim) feature batch into packed curve arrays."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[None]
    if H.ndim != 2 or H.shape[1] != config.in_dim:
        raise ValueError("expected inputs of shape (B, %d), got %s" % (config.in_dim, H.shape))
    _check_shapes(params, config)
    B = H.shape[0]
    K = config.k
    lv = config.levels_array()
    cache: dict = {"H": H}

    q0 = H @ params["base.w"] + params["base.b"][0]
    # one tanh-hidden MLP per increment, softplus (or relu) keeps it >= 0
    hid = np.tanh(np.einsum("khf,bf->bkh", params["inc.w1"], H) + params["inc.b1"][None])
    pre = np.einsum("bkh,kh->bk", hid, params["inc.w2"]) + params["inc.b2"][None]
    if config.activation == "softplus":
        incs = _softplus(pre)
    else:
        incs = np.maximum(pre, 0.0)
    values = np.empty((B, K))
    values[:, 0] = q0
    values[:, 1:] = q0[:, None] + np.cumsum(incs, axis=1)
    cache.update(hid=hid, inc_pre=pre, incs=incs)

    dlev = np.diff(lv)
    if config.mode == "iqf":
        d = np.broadcast_to(np.stack([lv[:-1], lv[1:]], axis=1)[None], (B, K - 1, 2)).copy()
        p = np.stack([values[:, :-1], values[:, 1:]], axis=2)
    else:
        S = config.spline_pieces
        pos_logits = np.einsum("ksf,bf->bks", params["pos.w"], H) + params["pos.b"][None]
        ex = np.exp(pos_logits - pos_logits.max(axis=2, keepdims=True))
        f = ex / ex.sum(axis=2, keepdims=True)
        G = np.cumsum(f, axis=2)
        d = np.empty((B, K - 1, S + 1))
        d[:, :, 0] = lv[:-1][None]
        d[:, :, -1] = lv[1:][None]
        if S > 1:
            d[:, :, 1:-1] = lv[:-1][None, :, None] + G[:, :, : S - 1] * dlev[None, :, None]
        val_pre = np.einsum("ksf,bf->bks", params["val.w"], H) + params["val.b"][None]
        e = _softplus(val_pre)
        sum_e = e.sum(axis=2, keepdims=True)
        w = e / sum_e
        W = np.cumsum(w, axis=2)
        Q = np.diff(values, axis=1)  # (B, K-1)
        p = np.empty((B, K - 1, S + 1))
        p[:, :, 0] = values[:, :-1]
        p[:, :, 1:] = values[:, :-1, None] + Q[:, :, None] * W
        p[:, :, -1] = values[:, 1:]
        cache.update(pos_f=f, pos_G=G, val_pre=val_pre, val_e=e, val_sum=sum_e, val_w=w, val_W=W)

    if config.mode == "isqf" and config.tail == "gpd":
        t_pre = H @ params["tail.w"].T + params["tail.b"][None]
        sig = _sigmoid(t_pre[:, (0, 2)])
        eta = ETA_CAP * sig
        mu = _softplus(t_pre[:, (1, 3)])
        left = (eta[:, 0], mu[:, 0])
        right = (eta[:, 1], mu[:, 1])
        cache.update(tail_pre=t_pre, tail_sig=sig)
    else:
        log_l0 = math.log(lv[0])
        log1m_lK = math.log1p(-lv[-1])
        if config.mode == "isqf":
            t_pre = H @ params["tail.w"].T + params["tail.b"][None]
            beta = _softplus(t_pre)
            a_L = 1.0 / beta[:, 0]
            a_R = -1.0 / beta[:, 1]
            cache.update(tail_pre=t_pre, tail_beta=beta)
        else:
            # slope constants of the derived tails; eps keeps flat curves finite
            eps = HALF_EPS
            cL = math.log((lv[1] + eps) / (lv[0] + eps) + eps)
            cR = math.log((1.0 - lv[-2] + eps) / (1.0 - lv[-1] + eps) + eps)
            a_L = (values[:, 1] - values[:, 0] + eps) / cL
            a_R = -(values[:, -1] - values[:, -2] + eps) / cR
            cache.update(iqf_cL=cL, iqf_cR=cR)
        b_L = values[:, 0] - a_L * log_l0
        b_R = values[:, -1] - a_R * log1m_lK
        left = (a_L, b_L)
        right = (a_R, b_R)

    return DecodedBatch(config=config, values=values, d=d, p=p, left=left, right=right, cache=cache)


def decode(params: Dict[str, np.ndarray], h: np.ndarray, config: HeadConfig) -> IsqfCurve:
    """Decode one feature vector into an evaluable curve object."""
    dec = decode_batch(params, np.asarray(h, dtype=float)[None] if np.ndim(h) == 1 else h, config)
    if dec.batch != 1:
        raise ValueError("decode takes a single feature vector; use decode_batch for batches")
    lv = config.levels_array()
    knots = QuantileKnots(lv, dec.values[0])
    segments = [SplineSegment(dec.d[0, k], dec.p[0, k]) for k in range(config.k - 1)]
    if config.mode == "isqf" and config.tail == "gpd":
        lt = GpdTail("left", float(dec.left[0][0]), float(dec.left[1][0]), lv[0], float(dec.values[0, 0]))
        rt = GpdTail("right", float(dec.right[0][0]), float(dec.right[1][0]), lv[-1], float(dec.values[0, -1]))
    else:
        a_L = float(dec.left[0][0])
        a_R = float(dec.right[0][0])
        lt = ExponentialTail("left", 1.0 / a_L, lv[0], float(dec.values[0, 0]))
        rt = ExponentialTail("right", -1.0 / a_R, lv[-1], float(dec.values[0, -1]))
    return IsqfCurve(knots, segments, lt, rt)


def eval_decoded_quantiles(dec: DecodedBatch, alphas: np.ndarray) -> np.ndarray:
    """Row i of the result evaluates curve i at alphas[i].

    ``alphas`` is (B,) or (B, L); fully vectorized across the batch, which is
    what autoregressive path sampling needs.
    """
    cfg = dec.config
    lv = cfg.levels_array()
    al = np.asarray(alphas, dtype=float)
    squeeze = al.ndim == 1
    if squeeze:
        al = al[:, None]
    if al.shape[0] != dec.batch:
        raise ValueError("alphas batch %d does not match decoded batch %d" % (al.shape[0], dec.batch))
    if np.any(al <= 0.0) or np.any(al >= 1.0):
        raise ValueError("quantile levels must lie in the open interval (0, 1)")
    B, L = al.shape
    S = dec.d.shape[2] - 1
    n = (cfg.k - 1) * S + 1
    big_d = np.concatenate([dec.d[:, :1, 0], dec.d[:, :, 1:].reshape(B, -1)], axis=1)
    big_p = np.concatenate([dec.p[:, :1, 0], dec.p[:, :, 1:].reshape(B, -1)], axis=1)
    # piece index per query: rightmost grid point <= alpha
    idx = (big_d[:, None, :] <= al[:, :, None]).sum(axis=2) - 1
    idx = np.clip(idx, 0, n - 2)
    d_lo = np.take_along_axis(big_d, idx, axis=1)
    d_hi = np.take_along_axis(big_d, idx + 1, axis=1)
    p_lo = np.take_along_axis(big_p, idx, axis=1)
    p_hi = np.take_along_axis(big_p, idx + 1, axis=1)
    out = p_lo + (al - d_lo) / (d_hi - d_lo) * (p_hi - p_lo)

    in_left = al < lv[0]
    in_right = al > lv[-1]
    if cfg.mode == "isqf" and cfg.tail == "gpd":
        eta_L, mu_L = dec.left
        eta_R, mu_R = dec.right
        if np.any(in_left):
            ratio = np.power(al / lv[0], -eta_L[:, None])
            q = dec.values[:, :1] - (mu_L / eta_L)[:, None] * (ratio - 1.0)
            out = np.where(in_left, q, out)
        if np.any(in_right):
            ratio = np.power((1.0 - al) / (1.0 - lv[-1]), -eta_R[:, None])
            q = dec.values[:, -1:] + (mu_R / eta_R)[:, None] * (ratio - 1.0)
            out = np.where(in_right, q, out)
    else:
        a_L, b_L = dec.left
        a_R, b_R = dec.right
        if np.any(in_left):
            out = np.where(in_left, a_L[:, None] * np.log(al) + b_L[:, None], out)
        if np.any(in_right):
            out = np.where(in_right, a_R[:, None] * np.log1p(-al) + b_R[:, None], out)
    return out[:, 0] if squeeze else out


def _zero_grads(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def crps_loss_and_grads(
    params: Dict[str, np.ndarray],
    H: np.ndarray,
    z: np.ndarray,
    config: HeadConfig,
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """Mean CRPS over the batch with gradients for every block and for H.

    The input gradient is what lets an upstream network train through this
    layer. Spline and exponential-tail pieces use the closed-form kernel
    gradients; generalized Pareto tails fall back to per-sample quadrature.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[None]
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != H.shape[0]:
        raise ValueError("batch size mismatch between H and z")
    if z.size == 0:
        raise ValueError("empty batch")
    dec = decode_batch(params, H, config)
    cfg = config
    B, K = dec.values.shape
    lv = cfg.levels_array()
    cache = dec.cache
    grads = _zero_grads(params)
    g_values = np.zeros((B, K))
    g_H = np.zeros_like(H)

    mid, g_d, g_p = kernels.crps_spline_grad(lv, dec.d, dec.p, z)
    total = mid.copy()

    # tail terms and their chains into values / tail parameters
    log_l0 = math.log(lv[0])
    log1m_lK = math.log1p(-lv[-1])
    if cfg.mode == "isqf" and cfg.tail == "gpd":
        eta_L, mu_L = dec.left
        eta_R, mu_R = dec.right
        sig = cache["tail_sig"]
        t_pre = cache["tail_pre"]
        g_tpre = np.zeros_like(t_pre)
        for i in range(B):
            v, ge, gm, ga = gpd_tail_crps_grad(0, lv[0], eta_L[i], mu_L[i], dec.values[i, 0], z[i])
            total[i] += v
            g_tpre[i, 0] = ge * ETA_CAP * sig[i, 0] * (1.0 - sig[i, 0])
            g_tpre[i, 1] = gm * _sigmoid(t_pre[i, 1:2])[0]
            g_values[i, 0] += ga
            v, ge, gm, ga = gpd_tail_crps_grad(1, lv[-1], eta_R[i], mu_R[i], dec.values[i, -1], z[i])
            total[i] += v
            g_tpre[i, 2] = ge * ETA_CAP * sig[i, 1] * (1.0 - sig[i, 1])
            g_tpre[i, 3] = gm * _sigmoid(t_pre[i, 3:4])[0]
            g_values[i, -1] += ga
        grads["tail.w"] += g_tpre.T @ H
        grads["tail.b"] += g_tpre.sum(axis=0)
        g_H += g_tpre @ params["tail.w"]
    else:
        a_L, b_L = dec.left
        a_R, b_R = dec.right
        vl, gaL, gbL = kernels.crps_exp_tail_grad(0, lv[0], a_L, b_L, z)
        vr, gaR, gbR = kernels.crps_exp_tail_grad(1, lv[-1], a_R, b_R, z)
        total += vl + vr
        # b = v_outer - a*log(...): fold the b-chain into the a-gradient
        gaL_tot = gaL - gbL * log_l0
        gaR_tot = gaR - gbR * log1m_lK
        g_values[:, 0] += gbL
        g_values[:, -1] += gbR
        if cfg.mode == "isqf":
            beta = cache["tail_beta"]
            g_beta = np.stack(
                [-gaL_tot / beta[:, 0] ** 2, gaR_tot / beta[:, 1] ** 2], axis=1
            )
            g_tpre = g_beta * _sigmoid(cache["tail_pre"])
            grads["tail.w"] += g_tpre.T @ H
            grads["tail.b"] += g_tpre.sum(axis=0)
            g_H += g_tpre @ params["tail.w"]
        else:
            cL = cache["iqf_cL"]
            cR = cache["iqf_cR"]
            # a_L = (v1 - v0 + eps)/cL, a_R = -(vK - vK_1 + eps)/cR
            g_values[:, 1] += gaL_tot / cL
            g_values[:, 0] -= gaL_tot / cL
            g_values[:, -1] -= gaR_tot / cR
            g_values[:, -2] += gaR_tot / cR

    # spline chains
    if cfg.mode == "iqf":
        g_values[:, :-1] += g_p[:, :, 0]
        g_values[:, 1:] += g_p[:, :, 1]
        # d grid is the fixed level grid, no parameters behind it
    else:
        S = cfg.spline_pieces
        f = cache["pos_f"]
        w = cache["val_w"]
        W = cache["val_W"]
        Q = np.diff(dec.values, axis=1)
        # p[:, :, 0] = v_k, p[:, :, j] = v_k + Q*W_{j-1}, last column exactly v_{k+1}
        g_values[:, :-1] += g_p[:, :, 0]
        g_values[:, 1:] += g_p[:, :, -1]
        inner = g_p[:, :, 1:-1]  # (B, K-1, S-1)
        if S > 1:
            Wi = W[:, :, : S - 1]
            g_values[:, :-1] += (inner * (1.0 - Wi)).sum(axis=2)
            g_values[:, 1:] += (inner * Wi).sum(axis=2)
            gW = inner * Q[:, :, None]  # (B, K-1, S-1)
            # W = cumsum(w); only the first S-1 entries carry gradient
            gw = np.zeros_like(w)
            gw[:, :, : S - 1] = np.cumsum(gW[:, :, ::-1], axis=2)[:, :, ::-1]
            ge = (gw - (gw * w).sum(axis=2, keepdims=True)) / cache["val_sum"]
            g_vpre = ge * _sigmoid(cache["val_pre"])
            grads["val.w"] += np.einsum("bks,bf->ksf", g_vpre, H)
            grads["val.b"] += g_vpre.sum(axis=0)
            g_H += np.einsum("bks,ksf->bf", g_vpre, params["val.w"])

            gG = g_d[:, :, 1:-1] * np.diff(lv)[None, :, None]  # (B, K-1, S-1)
            gf = np.zeros_like(f)
            gf[:, :, : S - 1] = np.cumsum(gG[:, :, ::-1], axis=2)[:, :, ::-1]
            g_plog = f * (gf - (f * gf).sum(axis=2, keepdims=True))
            grads["pos.w"] += np.einsum("bks,bf->ksf", g_plog, H)
            grads["pos.b"] += g_plog.sum(axis=0)
            g_H += np.einsum("bks,ksf->bf", g_plog, params["pos.w"])

    # values = q0 + cumsum(incs)
    g_q0 = g_values.sum(axis=1)
    g_inc = np.cumsum(g_values[:, ::-1], axis=1)[:, ::-1][:, 1:]
    if cfg.activation == "softplus":
        g_pre = g_inc * _sigmoid(cache["inc_pre"])
    else:
        g_pre = g_inc * (cache["inc_pre"] > 0.0)
    hid = cache["hid"]
    grads["inc.w2"] += np.einsum("bkh,bk->kh", hid, g_pre)
    grads["inc.b2"] += g_pre.sum(axis=0)
    g_hid = g_pre[:, :, None] * params["inc.w2"][None] * (1.0 - hid * hid)
    grads["inc.w1"] += np.einsum("bkh,bf->khf", g_hid, H)
    grads["inc.b1"] += g_hid.sum(axis=0)
    g_H += np.einsum("bkh,khf->bf", g_hid, params["inc.w1"])

    grads["base.w"] += H.T @ g_q0
    grads["base.b"] += g_q0.sum(keepdims=True)
    g_H += g_q0[:, None] * params["base.w"][None]

    inv_b = 1.0 / B
    for name in grads:
        grads[name] *= inv_b
    g_H *= inv_b
    return float(total.mean()), grads, g_H


def empirical_crps_loss(
    params: Dict[str, np.ndarray], H: np.ndarray, z: np.ndarray, config: HeadConfig
) -> float:
    """Mean CRPS of the decoded curves against their targets."""
    loss, _, _ = crps_loss_and_grads(params, H, z, config)
    return loss


@dataclass
class GradientCheckReport:
    """Outcome of comparing analytic gradients with central differences.

    A failed check is reported here, not raised; ``worst`` names the block
    and flat component index of the largest relative discrepancy.
    """

    passed: bool
    tol: float
    max_rel: float
    worst: str
    per_block: Dict[str, float]


def gradient_check(
    params: Dict[str, np.ndarray],
    H: np.ndarray,
    z: np.ndarray,
    config: HeadConfig,
    tol: float = 1e-4,
    fd_step: float = 1e-6,
    include_input: bool = False,
) -> GradientCheckReport:
    """Central finite differences over every parameter component.

    Components where both gradients are below 1e-8 in magnitude are skipped.
    The difference quotient carries roundoff of order eps*|loss|/step, so
    only the excess |g - fd| above that floor counts as discrepancy; without
    the floor, components with true gradients near 1e-7 would fail on noise
    alone and shrinking the step would make the check worse, not better.
    """
    H = np.asarray(H, dtype=float)
    z = np.asarray(z, dtype=float)
    loss, grads, g_H = crps_loss_and_grads(params, H, z, config)
    work = {name: arr.copy() for name, arr in params.items()}
    per_block: Dict[str, float] = {}
    max_rel = 0.0
    worst = ""
    noise = 64.0 * np.finfo(float).eps * max(1.0, abs(loss)) / fd_step

    def consider(name: str, i: int, g: float, fd: float):
        nonlocal max_rel, worst
        if abs(g) <= 1e-8 and abs(fd) <= 1e-8:
            return
        rel = max(0.0, abs(g - fd) - noise) / max(abs(fd), abs(g), 1e-8)
        per_block[name] = max(per_block.get(name, 0.0), rel)
        if rel > max_rel:
            max_rel = rel
            worst = "%s[%d]" % (name, i)

    for name, arr in work.items():
        flat = arr.reshape(-1)
        g_flat = grads[name].reshape(-1)
        for i in range(flat.size):
            step = fd_step * max(1.0, abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + step
            up = empirical_crps_loss(work, H, z, config)
            flat[i] = orig - step
            dn = empirical_crps_loss(work, H, z, config)
            flat[i] = orig
            consider(name, i, g_flat[i], (up - dn) / (2.0 * step))

    if include_input:
        Hw = H.copy()
        flatH = Hw.reshape(-1)
        gH_flat = g_H.reshape(-1)
        for i in range(flatH.size):
            step = fd_step * max(1.0, abs(flatH[i]))
            orig = flatH[i]
            flatH[i] = orig + step
            up = empirical_crps_loss(params, Hw, z, config)
            flatH[i] = orig - step
            dn = empirical_crps_loss(params, Hw, z, config)
            flatH[i] = orig
            consider("input", i, gH_flat[i], (up - dn) / (2.0 * step))

    return GradientCheckReport(
        passed=max_rel <= tol, tol=tol, max_rel=max_rel, worst=worst, per_block=per_block
    )


def _first_bad_block(*dicts: Dict[str, np.ndarray]) -> Optional[str]:
    for d in dicts:
        for name in sorted(d):
            if not np.all(np.isfinite(d[name])):
                return name
    return None


def fit(
    params: Dict[str, np.ndarray],
    H: np.ndarray,
    z: np.ndarray,
    config: HeadConfig,
    opt: Optional[SgdConfig] = None,
    seed: int = 0,
) -> Tuple[Dict[str, np.ndarray], List[float]]:
    """Momentum SGD on the mean CRPS; mutates and returns ``params``.

    Deterministic given the seed. A non-finite loss or parameter aborts with
    the name of the offending block.
    """
    opt = opt or SgdConfig()
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    vel = _zero_grads(params)
    losses: List[float] = []
    n = z.size
    for epoch in range(opt.epochs):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            loss, grads, _ = crps_loss_and_grads(params, H[idx], z[idx], config)
            if not math.isfinite(loss):
                bad = _first_bad_block(grads, params) or "loss"
                raise DivergenceError(
                    "non-finite loss at epoch %d (block %r)" % (epoch, bad), bad, epoch
                )
            for name in params:
                vel[name] = opt.momentum * vel[name] - opt.step * grads[name]
                params[name] += vel[name]
            bad = _first_bad_block(params)
            if bad is not None:
                raise DivergenceError(
                    "non-finite parameters at epoch %d (block %r)" % (epoch, bad), bad, epoch
                )
            acc += loss * idx.size
        losses.append(acc / n)
    return params, losses


# ---------------------------------------------------------------------------
# flat JSON parameter records
# ---------------------------------------------------------------------------


def params_to_doc(params: Dict[str, np.ndarray]) -> dict:
    return {
        "format": "quantile-head-params",
        "version": 1,
        "params": [
            {
                "name": name,
                "shape": list(params[name].shape),
                "values": np.asarray(params[name], dtype=float).ravel(order="C").tolist(),
            }
            for name in params
        ],
    }


def params_from_doc(doc: dict) -> Dict[str, np.ndarray]:
    if doc.get("format") != "quantile-head-params":
        raise ValueError("not a parameter record")
    out: Dict[str, np.ndarray] = {}
    for rec in doc["params"]:
        out[rec["name"]] = np.asarray(rec["values"], dtype=float).reshape(rec["shape"])
    return out


def save_params(params: Dict[str, np.ndarray], path) -> None:
    """Write the flat (name, shape, row-major values) JSON record.

    float repr round-trips exactly, so load_params(save_params(p)) is
    bit-identical; non-finite values are rejected.
    """
    with open(path, "w") as fh:
        json.dump(params_to_doc(params), fh, allow_nan=False)


def load_params(path) -> Dict[str, np.ndarray]:
    with open(path) as fh:
        return params_from_doc(json.load(fh))
