"""Seeded random generators shared across the test modules."""

import numpy as np

from isqf.curves import (
    ExponentialTail,
    GpdTail,
    IsqfCurve,
    QuantileKnots,
    SplineSegment,
    eval_quantile,
    iqf_curve,
)


def random_knots(rng, k_min=2, k_max=9):
    k = int(rng.integers(k_min, k_max))
    lv = np.sort(rng.uniform(0.02, 0.98, size=k))
    while k > 1 and np.min(np.diff(lv)) < 0.01:
        lv = np.sort(rng.uniform(0.02, 0.98, size=k))
    vals = np.cumsum(rng.exponential(1.0, size=k)) * rng.uniform(0.2, 3.0)
    vals += rng.normal(0.0, 5.0)
    return QuantileKnots(lv, vals)


def random_iqf(rng, k_min=2, k_max=9):
    return iqf_curve(random_knots(rng, k_min, k_max))


def random_segments(rng, knots, s):
    lv, vals = knots.levels, knots.values
    segs = []
    for i in range(lv.size - 1):
        inner = np.linspace(0.0, 1.0, s + 1)
        if s > 1:
            inner = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, size=s - 1)), [1.0]])
            while np.min(np.diff(inner)) < 0.02:
                inner = np.concatenate(
                    [[0.0], np.sort(rng.uniform(0.05, 0.95, size=s - 1)), [1.0]]
                )
        d = lv[i] + inner * (lv[i + 1] - lv[i])
        w = np.cumsum(rng.uniform(0.05, 1.0, size=s))
        w /= w[-1]
        p = vals[i] + np.concatenate([[0.0], w]) * (vals[i + 1] - vals[i])
        d[0], d[-1] = lv[i], lv[i + 1]
        p[0], p[-1] = vals[i], vals[i + 1]
        segs.append(SplineSegment(d, p))
    return tuple(segs)


def random_tail(rng, side, anchor_level, anchor_value, kind):
    if kind == "exp":
        return ExponentialTail(side, rng.uniform(0.3, 3.0), anchor_level, anchor_value)
    return GpdTail(side, rng.uniform(0.05, 0.45), rng.uniform(0.2, 3.0), anchor_level, anchor_value)


def random_isqf(rng, s=None, tails="exp", k_min=2, k_max=9):
    """Random spline curve; ``tails`` is 'exp', 'gpd' or 'mixed'."""
    knots = random_knots(rng, k_min, k_max)
    s = int(s if s is not None else rng.integers(1, 6))
    segs = random_segments(rng, knots, s)
    lv, vals = knots.levels, knots.values
    kinds = {"exp": ("exp", "exp"), "gpd": ("gpd", "gpd")}.get(
        tails, tuple(rng.choice(["exp", "gpd"], size=2))
    )
    left = random_tail(rng, "left", lv[0], vals[0], kinds[0])
    right = random_tail(rng, "right", lv[-1], vals[-1], kinds[1])
    return IsqfCurve(knots, segs, left, right)


def random_target(rng, curve):
    """A target near the curve most of the time, far outside sometimes."""
    if rng.uniform() < 0.7:
        return float(eval_quantile(curve, rng.uniform(0.002, 0.998)))
    lo, hi = curve.knots.values[0], curve.knots.values[-1]
    span = hi - lo + 1.0
    return float(rng.uniform(lo - 2.0 * span, hi + 2.0 * span))
