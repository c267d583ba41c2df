import numpy as np
import pytest

from isqf.curves import (
    HALF_EPS,
    ExponentialTail,
    GpdTail,
    IsqfCurve,
    QuantileKnots,
    SplineSegment,
    TailRegionError,
    eval_cdf,
    eval_exponential_tail,
    eval_gpd_tail,
    eval_quantile,
    eval_spline,
    fit_iqf_exponential_tails,
    interpolate_linear,
    iqf_curve,
    sample,
    sqf_from_isqf,
)
from helpers import random_iqf, random_isqf, random_knots


def test_knots_validation():
    with pytest.raises(ValueError):
        QuantileKnots([0.5], [1.0])
    with pytest.raises(ValueError):
        QuantileKnots([0.0, 0.5], [0.0, 1.0])
    with pytest.raises(ValueError):
        QuantileKnots([0.5, 0.2], [0.0, 1.0])
    with pytest.raises(ValueError):
        QuantileKnots([0.2, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        QuantileKnots([0.2, 0.5], [0.0, np.inf])
    # ties in values are allowed (point masses), ties in levels are not
    QuantileKnots([0.2, 0.5], [1.0, 1.0])
    with pytest.raises(ValueError):
        QuantileKnots([0.5, 0.5], [0.0, 1.0])


def test_segment_validation():
    with pytest.raises(ValueError):
        SplineSegment([0.2, 0.2], [0.0, 1.0])
    with pytest.raises(ValueError):
        SplineSegment([0.2, 0.4], [1.0, 0.0])
    seg = SplineSegment([0.2, 0.3, 0.4], [0.0, 0.5, 1.0])
    assert seg.pieces == 2


def test_tail_validation():
    with pytest.raises(ValueError):
        ExponentialTail("up", 1.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        ExponentialTail("left", -1.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        GpdTail("left", 0.6, 1.0, 0.1, 0.0)  # eta cap
    with pytest.raises(ValueError):
        GpdTail("left", 0.2, -1.0, 0.1, 0.0)


def test_curve_requires_consistent_assembly():
    knots = QuantileKnots([0.2, 0.8], [0.0, 1.0])
    seg = SplineSegment([0.2, 0.8], [0.0, 1.0])
    left = ExponentialTail("left", 1.0, 0.2, 0.0)
    right = ExponentialTail("right", 1.0, 0.8, 1.0)
    IsqfCurve(knots, (seg,), left, right)
    bad_anchor = ExponentialTail("left", 1.0, 0.3, 0.0)
    with pytest.raises(ValueError):
        IsqfCurve(knots, (seg,), bad_anchor, right)
    bad_seg = SplineSegment([0.2, 0.7], [0.0, 1.0])
    with pytest.raises(ValueError):
        IsqfCurve(knots, (bad_seg,), left, right)
    with pytest.raises(ValueError):
        IsqfCurve(knots, (seg, seg), left, right)


def test_interpolate_linear_hits_knots_and_midpoints():
    knots = QuantileKnots([0.1, 0.5, 0.9], [1.0, 2.0, 10.0])
    assert interpolate_linear(knots, 0.1) == 1.0
    assert interpolate_linear(knots, 0.9) == 10.0
    assert interpolate_linear(knots, 0.3) == pytest.approx(1.5, abs=1e-15)
    assert interpolate_linear(knots, 0.7) == pytest.approx(6.0, abs=1e-15)
    with pytest.raises(TailRegionError):
        interpolate_linear(knots, 0.05)
    with pytest.raises(TailRegionError):
        interpolate_linear(knots, 0.95)


def test_iqf_tail_rates_reproduce_adjacent_knots():
    # with the safeguard off, each tail passes through both defining knots
    knots = QuantileKnots([0.1, 0.5, 0.9], [1.0, 2.0, 10.0])
    left, right = fit_iqf_exponential_tails(knots, eps=0.0)
    assert eval_exponential_tail(left, 0.1) == pytest.approx(1.0, abs=1e-12)
    assert eval_exponential_tail(left, 0.5) == pytest.approx(2.0, abs=1e-12)
    assert eval_exponential_tail(right, 0.9) == pytest.approx(10.0, abs=1e-12)
    assert eval_exponential_tail(right, 0.5) == pytest.approx(2.0, abs=1e-12)


def test_iqf_tail_safeguard_keeps_beta_finite_on_flat_knots():
    knots = QuantileKnots([0.3, 0.7], [2.0, 2.0])
    left, right = fit_iqf_exponential_tails(knots)
    assert np.isfinite(left.beta) and left.beta > 0.0
    assert np.isfinite(right.beta) and right.beta > 0.0
    assert HALF_EPS == 0.5 * np.finfo(np.float64).eps


def test_iqf_matches_linear_interpolation_between_knots():
    rng = np.random.default_rng(7)
    for _ in range(50):
        knots = random_knots(rng)
        curve = iqf_curve(knots)
        al = rng.uniform(knots.levels[0], knots.levels[-1], size=64)
        got = eval_quantile(curve, al)
        want = interpolate_linear(knots, al)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_eval_quantile_rejects_closed_endpoints():
    curve = random_iqf(np.random.default_rng(0))
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            eval_quantile(curve, bad)


def test_quantile_is_monotone_and_continuous_across_regions():
    rng = np.random.default_rng(11)
    for i in range(60):
        curve = random_isqf(rng, tails="mixed")
        al = np.sort(rng.uniform(1e-6, 1.0 - 1e-6, size=400))
        q = eval_quantile(curve, al)
        assert np.all(np.diff(q) >= 0.0)
        # continuity at the tail anchors
        lv = curve.knots.levels
        for lam, v in ((lv[0], curve.knots.values[0]), (lv[-1], curve.knots.values[-1])):
            qa = eval_quantile(curve, np.array([lam - 1e-12, lam, lam + 1e-12]))
            assert np.max(np.abs(qa - v)) < 1e-8


def test_cdf_inverts_quantile():
    rng = np.random.default_rng(3)
    for _ in range(40):
        curve = random_isqf(rng, tails="mixed")
        al = rng.uniform(0.001, 0.999, size=100)
        z = eval_quantile(curve, al)
        back = eval_cdf(curve, z)
        np.testing.assert_allclose(back, al, rtol=0, atol=1e-9)


def test_cdf_clamps_to_unit_interval():
    curve = random_iqf(np.random.default_rng(5))
    lo = curve.knots.values[0] - 1e6
    hi = curve.knots.values[-1] + 1e6
    assert 0.0 <= eval_cdf(curve, lo) < 1e-6
    assert 1.0 - 1e-6 < eval_cdf(curve, hi) <= 1.0


def test_gpd_tail_evaluation_matches_closed_form():
    tail = GpdTail("right", 0.3, 1.5, 0.9, 4.0)
    al = 0.97
    t = (1.0 - al) / (1.0 - 0.9)
    want = 4.0 + (1.5 / 0.3) * (t ** (-0.3) - 1.0)
    assert eval_gpd_tail(tail, al) == pytest.approx(want, rel=1e-15)
    left = GpdTail("left", 0.2, 0.7, 0.1, -2.0)
    want_l = -2.0 - (0.7 / 0.2) * ((0.03 / 0.1) ** (-0.2) - 1.0)
    assert eval_gpd_tail(left, 0.03) == pytest.approx(want_l, rel=1e-15)


def test_eval_spline_outside_segment_raises():
    seg = SplineSegment([0.2, 0.5], [1.0, 2.0])
    with pytest.raises(TailRegionError):
        eval_spline(seg, 0.6)


def test_sampling_is_deterministic_and_inside_support():
    curve = random_isqf(np.random.default_rng(9), tails="exp")
    s1 = sample(curve, 500, seed=42)
    s2 = sample(curve, 500, seed=42)
    assert np.array_equal(s1, s2)
    assert np.all(np.isfinite(s1))
    with pytest.raises(ValueError):
        sample(curve, 0)


def test_sampled_quantiles_approach_curve():
    # inverse-transform draws reproduce the curve's own quantiles
    curve = random_iqf(np.random.default_rng(21), k_min=4, k_max=8)
    draws = sample(curve, 200_000, seed=1)
    grid = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
    emp = np.quantile(draws, grid)
    want = eval_quantile(curve, grid)
    scale = curve.knots.values[-1] - curve.knots.values[0] + 1.0
    assert np.max(np.abs(emp - want)) < 0.03 * scale


def test_sqf_conversion_reproduces_spline():
    rng = np.random.default_rng(13)
    for _ in range(100):
        curve = random_isqf(rng, s=int(rng.integers(1, 6)))
        for seg in curve.segments:
            c = sqf_from_isqf(seg)
            al = rng.uniform(seg.d[0], seg.d[-1], size=50)
            direct = eval_spline(seg, al)
            sqf = seg.p[0] + np.maximum(al[:, None] - seg.d[:-1], 0.0) @ c
            np.testing.assert_allclose(sqf, direct, rtol=0, atol=1e-12)
