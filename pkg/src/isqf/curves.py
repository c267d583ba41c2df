"""Monotone piecewise quantile functions with spline interior and heavy tails.

A curve is assembled from knot basis estimates, per-segment linear splines
and two parametric tails (exponential or generalized Pareto). Construction
enforces monotonicity structurally, so evaluation never produces quantile
crossings; evaluation, inversion and sampling are pure functions of the
immutable curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

HALF_EPS = 0.5 * float(np.finfo(np.float64).eps)

_PIN_TOL = 1e-9


class TailRegionError(ValueError):
    """Raised when a level falls outside the piece a function is defined on."""


def _as_float_vector(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class QuantileKnots:
    """Fixed quantile levels with their (non-decreasing) basis estimates."""

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        levels = _as_float_vector(self.levels, "levels")
        values = _as_float_vector(self.values, "values")
        if levels.size < 2:
            raise ValueError("need at least two knots")
        if levels.size != values.size:
            raise ValueError("levels and values must have equal length")
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise ValueError("levels must lie in the open interval (0, 1)")
        if np.any(np.diff(levels) <= 0.0):
            raise ValueError("levels must be strictly increasing")
        if np.any(np.diff(values) < 0.0):
            raise ValueError("values must be non-decreasing")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.levels.size


@dataclass(frozen=True)
class SplineSegment:
    """Linear spline between two adjacent knots.

    ``d`` holds S+1 strictly increasing positions with the segment endpoints
    pinned to the knot levels; ``p`` holds the non-decreasing values at those
    positions, pinned to the knot values.
    """

    d: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        d = _as_float_vector(self.d, "d")
        p = _as_float_vector(self.p, "p")
        if d.size < 2 or d.size != p.size:
            raise ValueError("d and p must have equal length >= 2")
        if np.any(np.diff(d) <= 0.0):
            raise ValueError("positions d must be strictly increasing")
        if np.any(np.diff(p) < 0.0):
            raise ValueError("values p must be non-decreasing")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "p", p)

    @property
    def pieces(self) -> int:
        return self.d.size - 1


@dataclass(frozen=True)
class ExponentialTail:
    """Exponential tail a*log(alpha)+b (left) or a*log(1-alpha)+b (right).

    ``a`` and ``b`` are derived so the curve passes through
    (anchor_level, anchor_value) exactly; ``beta`` is the rate.
    """

    side: str
    beta: float
    anchor_level: float
    anchor_value: float
    a: float = field(init=False)
    b: float = field(init=False)

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if not (self.beta > 0.0 and np.isfinite(self.beta)):
            raise ValueError("beta must be positive and finite")
        if not (0.0 < self.anchor_level < 1.0):
            raise ValueError("anchor_level must lie in (0, 1)")
        if self.side == "left":
            a = 1.0 / self.beta
            b = self.anchor_value - a * np.log(self.anchor_level)
        else:
            a = -1.0 / self.beta
            b = self.anchor_value - a * np.log1p(-self.anchor_level)
        object.__setattr__(self, "a", float(a))
        object.__setattr__(self, "b", float(b))

    def _kernel_args(self):
        return _kernels.TAIL_EXP, self.a, self.b


@dataclass(frozen=True)
class GpdTail:
    """Generalized Pareto tail anchored at the outermost knot."""

    side: str
    eta: float
    mu: float
    anchor_level: float
    anchor_value: float

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if not (0.0 < self.eta <= 0.499):
            raise ValueError("eta must lie in (0, 0.499]")
        if not (self.mu > 0.0 and np.isfinite(self.mu)):
            raise ValueError("mu must be positive and finite")
        if not (0.0 < self.anchor_level < 1.0):
            raise ValueError("anchor_level must lie in (0, 1)")

    def _kernel_args(self):
        return _kernels.TAIL_GPD, self.eta, self.mu


@dataclass(frozen=True)
class IsqfCurve:
    """Globally monotone quantile function on (0, 1).

    Monotonicity and continuity are enforced at construction: segment
    endpoints must pin to the knots and tails must anchor at the outermost
    knots.
    """

    knots: QuantileKnots
    segments: tuple
    left_tail: object
    right_tail: object

    def __post_init__(self):
        segments = tuple(self.segments)
        lv = self.knots.levels
        vals = self.knots.values
        if len(segments) != lv.size - 1:
            raise ValueError("need exactly one segment per knot interval")
        n_pieces = segments[0].pieces
        for k, seg in enumerate(segments):
            if seg.pieces != n_pieces:
                raise ValueError("all segments must have the same piece count")
            scale = max(1.0, abs(vals[k]), abs(vals[k + 1]))
            if abs(seg.d[0] - lv[k]) > _PIN_TOL or abs(seg.d[-1] - lv[k + 1]) > _PIN_TOL:
                raise ValueError(f"segment {k} positions are not pinned to its knot levels")
            if abs(seg.p[0] - vals[k]) > _PIN_TOL * scale or abs(seg.p[-1] - vals[k + 1]) > _PIN_TOL * scale:
                raise ValueError(f"segment {k} values are not pinned to its knot values")
        for tail, side, idx in ((self.left_tail, "left", 0), (self.right_tail, "right", -1)):
            if tail.side != side:
                raise ValueError(f"{side} tail has side={tail.side!r}")
            scale = max(1.0, abs(vals[idx]))
            if abs(tail.anchor_level - lv[idx]) > _PIN_TOL or abs(tail.anchor_value - vals[idx]) > _PIN_TOL * scale:
                raise ValueError(f"{side} tail is not anchored at the outermost knot")
        object.__setattr__(self, "segments", segments)
        d = np.empty((lv.size - 1, n_pieces + 1))
        p = np.empty_like(d)
        for k, seg in enumerate(segments):
            d[k] = seg.d
            p[k] = seg.p
        # exact pinning keeps the flattened evaluation grid strictly monotone
        d[:, 0] = lv[:-1]
        d[:, -1] = lv[1:]
        p[:, 0] = vals[:-1]
        p[:, -1] = vals[1:]
        object.__setattr__(self, "_d", d)
        object.__setattr__(self, "_p", p)

    def _kernel_args(self):
        lt = self.left_tail._kernel_args()
        rt = self.right_tail._kernel_args()
        return (self.knots.levels, self.knots.values, self._d, self._p) + lt + rt


def interpolate_linear(knots: QuantileKnots, alpha):
    """Linear interpolation between adjacent knots.

    Raises TailRegionError outside [levels[0], levels[-1]]; the caller is
    expected to dispatch those levels to a tail.
    """
    al = np.asarray(alpha, dtype=np.float64)
    lv = knots.levels
    if np.any(al < lv[0]) or np.any(al > lv[-1]):
        raise TailRegionError("level outside the knot range belongs to a tail")
    k = np.clip(np.searchsorted(lv, al, side="right") - 1, 0, lv.size - 2)
    w = (lv[k + 1] - al) / (lv[k + 1] - lv[k])
    out = w * knots.values[k] + (1.0 - w) * knots.values[k + 1]
    return float(out) if np.isscalar(alpha) else out


def fit_iqf_exponential_tails(knots: QuantileKnots, eps: float = HALF_EPS):
    """Exponential tail rates from the two outermost knot pairs.

    With eps=0 each tail reproduces both of its defining knots exactly; the
    safeguard keeps beta finite and positive when adjacent values coincide.
    """
    lv = knots.levels
    vals = knots.values
    beta_l = np.log((lv[1] + eps) / (lv[0] + eps) + eps) / (vals[1] - vals[0] + eps)
    beta_r = np.log((1.0 - lv[-2] + eps) / (1.0 - lv[-1] + eps) + eps) / (vals[-1] - vals[-2] + eps)
    left = ExponentialTail("left", float(beta_l), float(lv[0]), float(vals[0]))
    right = ExponentialTail("right", float(beta_r), float(lv[-1]), float(vals[-1]))
    return left, right


def _check_open_unit(alpha):
    al = np.asarray(alpha, dtype=np.float64)
    if np.any(al <= 0.0) or np.any(al >= 1.0):
        raise ValueError("quantile level must lie in the open interval (0, 1)")
    return al


def eval_exponential_tail(tail: ExponentialTail, alpha):
    al = _check_open_unit(alpha)
    if tail.side == "left":
        out = tail.a * np.log(al) + tail.b
    else:
        out = tail.a * np.log1p(-al) + tail.b
    return float(out) if np.isscalar(alpha) else out


def eval_gpd_tail(tail: GpdTail, alpha):
    al = _check_open_unit(alpha)
    if tail.side == "left":
        out = tail.anchor_value - (tail.mu / tail.eta) * ((al / tail.anchor_level) ** (-tail.eta) - 1.0)
    else:
        t = (1.0 - al) / (1.0 - tail.anchor_level)
        out = tail.anchor_value + (tail.mu / tail.eta) * (t ** (-tail.eta) - 1.0)
    return float(out) if np.isscalar(alpha) else out


def eval_spline(segment: SplineSegment, alpha):
    """Clamped-sum spline evaluation on [d_0, d_S]."""
    al = np.asarray(alpha, dtype=np.float64)
    d = segment.d
    p = segment.p
    if np.any(al < d[0]) or np.any(al > d[-1]):
        raise TailRegionError("level outside the segment")
    u = np.clip((al[..., None] - d[:-1]) / np.diff(d), 0.0, 1.0)
    out = p[0] + np.sum(u * np.diff(p), axis=-1)
    return float(out) if np.isscalar(alpha) else out


def iqf_curve(knots: QuantileKnots, eps: float = HALF_EPS) -> IsqfCurve:
    """The linear-interpolation curve: one-piece segments, fitted exp tails."""
    left, right = fit_iqf_exponential_tails(knots, eps)
    lv = knots.levels
    vals = knots.values
    segments = tuple(
        SplineSegment(np.array([lv[k], lv[k + 1]]), np.array([vals[k], vals[k + 1]]))
        for k in range(lv.size - 1)
    )
    return IsqfCurve(knots, segments, left, right)


def eval_quantile(curve: IsqfCurve, alpha):
    al = _check_open_unit(alpha)
    out = _kernels.eval_quantile(*curve._kernel_args(), np.atleast_1d(al))
    return float(out[0]) if np.isscalar(alpha) else out.reshape(al.shape)


def eval_cdf(curve: IsqfCurve, z):
    zs = np.asarray(z, dtype=np.float64)
    out = _kernels.eval_cdf(*curve._kernel_args(), np.atleast_1d(zs))
    return float(out[0]) if np.isscalar(z) else out.reshape(zs.shape)


def sample(curve: IsqfCurve, n: int, seed=None):
    """n inverse-transform draws; deterministic for a fixed seed."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    alphas = rng.uniform(0.0, 1.0, size=n)
    # uniform() can return 0.0 exactly; nudge into the open interval
    alphas = np.clip(alphas, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return _kernels.eval_quantile(*curve._kernel_args(), alphas)


def sqf_from_isqf(segment: SplineSegment) -> np.ndarray:
    """Coefficients c_s of the equivalent rectified-linear spline form.

    p_0 + sum_s c_s * max(alpha - d_s, 0) reproduces eval_spline on the
    segment; c_0 is the first piece slope and c_s the slope increments.
    """
    m = np.diff(segment.p) / np.diff(segment.d)
    c = np.empty_like(m)
    c[0] = m[0]
    c[1:] = np.diff(m)
    return c
