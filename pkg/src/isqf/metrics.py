"""Forecast evaluation metrics.

All functions take dense arrays: ``predictions`` is (m, tau, K) over K
quantile levels, ``actuals`` is (m, tau). Metrics with a zero normalizer
raise UndefinedMetricError; report builders turn that into explicit "N/A"
entries instead of silent zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "UndefinedMetricError",
    "pinball",
    "wql",
    "mean_wql",
    "crossing_percent",
    "seasonal_error",
    "msis",
    "EvalReport",
    "build_report",
]


class UndefinedMetricError(ValueError):
    """A metric normalizer is zero, the value would be meaningless."""


def pinball(error: np.ndarray, alpha: float) -> np.ndarray:
    """Quantile loss rho_alpha(z - q) elementwise, error = z - q."""
    return np.where(error >= 0.0, alpha * error, (alpha - 1.0) * error)


def wql(predictions: np.ndarray, actuals: np.ndarray, alpha: float) -> float:
    """Weighted quantile loss at one level: 2 * sum rho_alpha / sum |z|."""
    q = np.asarray(predictions, dtype=float)
    z = np.asarray(actuals, dtype=float)
    if q.shape != z.shape:
        raise ValueError("predictions and actuals must have the same shape")
    denom = np.abs(z).sum()
    if denom == 0.0:
        raise UndefinedMetricError("wql normalizer sum|z| is zero")
    return float(2.0 * pinball(z - q, float(alpha)).sum() / denom)


def mean_wql(predictions: np.ndarray, actuals: np.ndarray, levels: Sequence[float]) -> float:
    """Arithmetic mean of wql over the levels; approximates the CRPS."""
    q = np.asarray(predictions, dtype=float)
    lv = np.asarray(levels, dtype=float).reshape(-1)
    if q.ndim < 1 or q.shape[-1] != lv.size:
        raise ValueError("last axis of predictions must match the number of levels")
    return float(np.mean([wql(q[..., k], actuals, lv[k]) for k in range(lv.size)]))


def crossing_percent(predictions: np.ndarray) -> float:
    """Percentage of adjacent level pairs with q at the lower level strictly
    above q at the higher one.

    Levels along the last axis, assumed sorted ascending. Ties do not count.
    Only adjacent pairs are inspected, so this is a lower bound on all
    crossings.
    """
    q = np.asarray(predictions, dtype=float)
    if q.ndim < 1 or q.shape[-1] < 2:
        raise ValueError("need at least two levels")
    crossed = q[..., :-1] > q[..., 1:]
    return float(100.0 * crossed.mean())


def seasonal_error(history: np.ndarray, seasonality: int) -> float:
    """Mean absolute seasonal difference over the panel:
    (1/(m(T-f))) * sum |z_{i,t} - z_{i,t+f}|.

    Pairs with a non-finite member (NaN-padded history) are left out of the
    mean; a history with no finite pair is undefined.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim == 1:
        h = h[None]
    f = int(seasonality)
    if f < 1 or h.shape[1] <= f:
        raise ValueError("history must be longer than the seasonality")
    diffs = np.abs(h[:, :-f] - h[:, f:])
    finite = np.isfinite(diffs)
    if not finite.any():
        raise UndefinedMetricError("no finite seasonal pairs in the history")
    return float(diffs[finite].mean())


def msis(
    lower: np.ndarray,
    upper: np.ndarray,
    actuals: np.ndarray,
    history: np.ndarray,
    seasonality: int,
    zeta: float,
) -> float:
    """Mean scaled interval score of the central (1 - zeta) interval.

    Width plus (2/zeta)-weighted penalties whenever an actual escapes the
    interval, averaged over (i, t) and divided by the seasonal error of the
    history.
    """
    lo = np.asarray(lower, dtype=float)
    up = np.asarray(upper, dtype=float)
    z = np.asarray(actuals, dtype=float)
    if not (lo.shape == up.shape == z.shape):
        raise ValueError("lower, upper and actuals must share a shape")
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    se = seasonal_error(history, seasonality)
    if se == 0.0:
        raise UndefinedMetricError("seasonal error is zero")
    pen = (2.0 / zeta) * ((lo - z) * (z < lo) + (z - up) * (z > up))
    return float(((up - lo) + pen).mean() / se)


MetricValue = Union[float, str]  # "N/A" when the normalizer vanishes


@dataclass
class EvalReport:
    """Aggregated metrics with explicit N/A entries for undefined values."""

    wql: Dict[float, MetricValue]
    mean_wql: MetricValue
    crossing_pct: float
    msis: Dict[float, MetricValue]
    m: int
    tau: int
    levels: Tuple[float, ...]
    seasonality: Optional[int]

    def to_json_dict(self) -> dict:
        out: dict = {}
        for lv, v in self.wql.items():
            out["wql_%g" % lv] = v
        out["mean_wql"] = self.mean_wql
        out["crossing_pct"] = self.crossing_pct
        for zeta, v in self.msis.items():
            out["msis_%g" % zeta] = v
        out["m"] = self.m
        out["tau"] = self.tau
        out["levels"] = list(self.levels)
        out["seasonality"] = self.seasonality
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), allow_nan=False)


def build_report(
    predictions: np.ndarray,
    levels: Sequence[float],
    actuals: np.ndarray,
    history: Optional[np.ndarray] = None,
    seasonality: Optional[int] = None,
    zetas: Sequence[float] = (),
    interval_quantiles=None,
) -> EvalReport:
    """Score a prediction cube against actuals.

    ``predictions`` is (m, tau, K) at sorted ``levels``. MSIS entries need
    ``history`` and ``seasonality`` plus, per zeta, the interval bounds:
    ``interval_quantiles(alpha_lo, alpha_up) -> (lower, upper)`` arrays of
    shape (m, tau), typically inter/extrapolated from the model curves. If it
    is omitted, the bounds are looked up in ``levels`` and missing ones give
    an N/A entry.
    """
    q = np.asarray(predictions, dtype=float)
    z = np.asarray(actuals, dtype=float)
    lv = [float(v) for v in levels]
    if q.ndim != 3 or q.shape[:2] != z.shape or q.shape[2] != len(lv):
        raise ValueError("predictions must be (m, tau, K) matching actuals and levels")
    m, tau = z.shape

    wqls: Dict[float, MetricValue] = {}
    for k, alpha in enumerate(lv):
        try:
            wqls[alpha] = wql(q[:, :, k], z, alpha)
        except UndefinedMetricError:
            wqls[alpha] = "N/A"
    if any(v == "N/A" for v in wqls.values()):
        mw: MetricValue = "N/A"
    else:
        mw = float(np.mean([wqls[a] for a in lv]))

    msis_map: Dict[float, MetricValue] = {}
    for zeta in zetas:
        zeta = float(zeta)
        a_lo, a_up = zeta / 2.0, 1.0 - zeta / 2.0
        if history is None or seasonality is None:
            msis_map[zeta] = "N/A"
            continue
        if interval_quantiles is not None:
            lo, up = interval_quantiles(a_lo, a_up)
        else:
            try:
                lo = q[:, :, lv.index(a_lo)]
                up = q[:, :, lv.index(a_up)]
            except ValueError:
                msis_map[zeta] = "N/A"
                continue
        try:
            msis_map[zeta] = msis(lo, up, z, history, seasonality, zeta)
        except UndefinedMetricError:
            msis_map[zeta] = "N/A"

    return EvalReport(
        wql=wqls,
        mean_wql=mw,
        crossing_pct=crossing_percent(q),
        msis=msis_map,
        m=m,
        tau=tau,
        levels=tuple(lv),
        seasonality=seasonality,
    )
