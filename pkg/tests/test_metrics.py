import json

import numpy as np
import pytest

from isqf.crps import crps
from isqf.curves import QuantileKnots, eval_quantile, iqf_curve
from isqf.metrics import (
    UndefinedMetricError,
    build_report,
    crossing_percent,
    mean_wql,
    msis,
    pinball,
    seasonal_error,
    wql,
)


def test_wql_golden():
    got = wql(np.array([12.0, 18.0]), np.array([10.0, 20.0]), 0.9)
    assert got == pytest.approx(2.0 * (0.2 + 1.8) / 30.0, abs=1e-12)


def test_wql_scale_invariance():
    rng = np.random.default_rng(0)
    z = rng.normal(5.0, 2.0, size=(3, 7))
    q = z + rng.normal(0.0, 1.0, size=z.shape)
    base = wql(q, z, 0.3)
    for s in (0.01, 7.0, 1234.5):
        assert wql(s * q, s * z, 0.3) == pytest.approx(base, rel=1e-12)


def test_wql_zero_denominator_raises():
    with pytest.raises(UndefinedMetricError):
        wql(np.ones(4), np.zeros(4), 0.5)


def test_pinball_is_asymmetric():
    err = np.array([-2.0, 2.0])
    np.testing.assert_allclose(pinball(err, 0.9), [0.2, 1.8])


def test_crossing_golden_and_strict_ties():
    q = np.array([[[1.0, 2.0, 3.0], [1.0, 0.5, 3.0]]])
    assert crossing_percent(q) == 25.0
    tied = np.array([[[1.0, 1.0, 3.0]]])
    assert crossing_percent(tied) == 0.0
    with pytest.raises(ValueError):
        crossing_percent(np.zeros((2, 2, 1)))


def test_seasonal_error_golden():
    assert seasonal_error(np.array([1.0, 3.0, 2.0]), 1) == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(ValueError):
        seasonal_error(np.array([1.0, 2.0]), 5)


def test_seasonal_error_skips_nan_padding():
    h = np.array([[np.nan, np.nan, 1.0, 3.0, 2.0]])
    assert seasonal_error(h, 1) == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        seasonal_error(np.full((1, 4), np.nan), 1)


def test_msis_penalty_activates_exactly_outside_the_interval():
    lo = np.zeros((1, 1))
    up = np.ones((1, 1))
    hist = np.array([1.0, 3.0, 2.0])  # SE = 1.5

    inside = msis(lo, up, np.array([[1.0]]), hist, 1, 0.1)
    assert inside == pytest.approx(1.0 / 1.5, abs=1e-12)  # width only

    just_out = msis(lo, up, np.array([[1.0 + 1e-3]]), hist, 1, 0.1)
    assert just_out == pytest.approx((1.0 + 20.0 * 1e-3) / 1.5, abs=1e-12)

    below = msis(lo, up, np.array([[-0.5]]), hist, 1, 0.1)
    assert below == pytest.approx((1.0 + 20.0 * 0.5) / 1.5, abs=1e-12)


def test_msis_widening_with_coverage_increases_score():
    hist = np.array([1.0, 3.0, 2.0])
    z = np.array([[0.5, 0.6]])
    narrow = msis(np.zeros((1, 2)), np.ones((1, 2)), z, hist, 1, 0.1)
    wide = msis(np.full((1, 2), -1.0), np.full((1, 2), 2.0), z, hist, 1, 0.1)
    assert wide > narrow


def test_msis_zero_seasonal_error_raises():
    with pytest.raises(UndefinedMetricError):
        msis(np.zeros((1, 2)), np.ones((1, 2)), np.ones((1, 2)), np.ones(6), 1, 0.1)


def test_report_json_keys_and_na_entries():
    rep = build_report(
        predictions=np.zeros((1, 2, 3)),
        levels=[0.1, 0.5, 0.9],
        actuals=np.zeros((1, 2)),
        history=np.ones(5),
        seasonality=1,
        zetas=[0.1],
    )
    doc = json.loads(rep.to_json())
    assert doc["wql_0.5"] == "N/A"
    assert doc["mean_wql"] == "N/A"
    assert doc["msis_0.1"] == "N/A"
    assert doc["crossing_pct"] == 0.0
    assert doc["m"] == 1 and doc["tau"] == 2


def test_report_uses_interval_callback_for_msis():
    rng = np.random.default_rng(1)
    z = rng.normal(10.0, 1.0, size=(2, 3))
    q = np.sort(rng.normal(10.0, 1.0, size=(2, 3, 3)), axis=2)
    hist = rng.normal(10.0, 1.0, size=(2, 20))

    calls = []

    def interval(a_lo, a_up):
        calls.append((a_lo, a_up))
        return q[:, :, 0] - 1.0, q[:, :, 2] + 1.0

    rep = build_report(q, [0.1, 0.5, 0.9], z, history=hist, seasonality=4,
                       zetas=[0.1], interval_quantiles=interval)
    assert calls == [(0.05, 0.95)]
    assert isinstance(rep.msis[0.1], float)
    # without the callback the 0.05/0.95 levels are missing from the grid
    rep2 = build_report(q, [0.1, 0.5, 0.9], z, history=hist, seasonality=4, zetas=[0.1])
    assert rep2.msis[0.1] == "N/A"


def test_dense_level_mean_wql_approximates_crps():
    curve = iqf_curve(QuantileKnots([0.2, 0.5, 0.8], [-1.0, 0.3, 1.4]))
    levels = np.linspace(0.005, 0.995, 199)
    z = 0.7
    q = eval_quantile(curve, levels)[None, None, :]
    got = mean_wql(q, np.array([[z]]), levels) * abs(z)
    want = crps(curve, z).total
    assert abs(got - want) / want < 0.02
