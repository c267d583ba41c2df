"""Synthetic data generators and CSV panel I/O.

Distribution kinds come with their true quantile function: closed form where
one exists, high-precision bisection of the CDF otherwise, so fitted curves
can always be compared against ground truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .forecaster import SeriesPanel

__all__ = [
    "SynthSpec",
    "PanelFormatError",
    "default_mixture_spec",
    "generate",
    "true_cdf",
    "true_pdf",
    "true_quantile",
    "save_panel",
    "load_panel",
]

KINDS = ("gaussian-mixture", "cauchy", "exponential", "noisy-sinusoid-panel")

BISECT_TOL = 1e-12


class PanelFormatError(ValueError):
    """Malformed panel CSV; ``line`` is the 1-based offending line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class SynthSpec:
    """One synthetic data source.

    Distribution kinds (gaussian-mixture, cauchy, exponential) yield ``n``
    i.i.d. samples; noisy-sinusoid-panel yields a SeriesPanel of ``m`` series
    of length ``length`` with per-series random phase.
    """

    kind: str
    weights: Tuple[float, ...] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    means: Tuple[float, ...] = (-4.0, 0.0, 4.0)
    stds: Tuple[float, ...] = (0.6, 0.6, 0.6)
    loc: float = 0.0
    scale: float = 1.0
    rate: float = 1.0
    n: int = 20000
    m: int = 20
    length: int = 96
    period: int = 24
    horizon: int = 24
    amplitude: float = 2.0
    level: float = 5.0
    noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("unknown kind %r, expected one of %s" % (self.kind, ", ".join(KINDS)))
        if self.kind == "gaussian-mixture":
            w = np.asarray(self.weights, dtype=float)
            mu = np.asarray(self.means, dtype=float)
            s = np.asarray(self.stds, dtype=float)
            if not (w.size == mu.size == s.size >= 1):
                raise ValueError("weights, means and stds must have equal nonzero length")
            if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be non-negative and sum to 1")
            if np.any(s <= 0.0):
                raise ValueError("stds must be positive")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))
            object.__setattr__(self, "means", tuple(float(x) for x in mu))
            object.__setattr__(self, "stds", tuple(float(x) for x in s))
        if self.kind == "cauchy" and self.scale <= 0.0:
            raise ValueError("scale must be positive")
        if self.kind == "exponential" and self.rate <= 0.0:
            raise ValueError("rate must be positive")
        if self.kind != "noisy-sinusoid-panel" and self.n < 1:
            raise ValueError("sample count must be positive")
        if self.kind == "noisy-sinusoid-panel":
            if min(self.m, self.period, self.horizon) < 1:
                raise ValueError("m, period and horizon must be positive")
            if self.length <= self.horizon:
                raise ValueError("length must exceed the horizon")
            if self.noise < 0.0 or self.amplitude < 0.0:
                raise ValueError("noise and amplitude must be non-negative")


def default_mixture_spec(n: int = 20000, seed: int = 0) -> SynthSpec:
    """The 3-peak mixture: equal weights, means (-4, 0, 4), std 0.6."""
    return replace(SynthSpec("gaussian-mixture"), n=n, seed=seed)


def generate(spec: SynthSpec):
    """Draw from the spec; deterministic under spec.seed.

    Returns an (n,) sample array, or a SeriesPanel for the panel kind.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian-mixture":
        w = np.asarray(spec.weights)
        comp = rng.choice(w.size, size=spec.n, p=w)
        return rng.normal(np.asarray(spec.means)[comp], np.asarray(spec.stds)[comp])
    if spec.kind == "cauchy":
        return spec.loc + spec.scale * rng.standard_cauchy(spec.n)
    if spec.kind == "exponential":
        return rng.exponential(1.0 / spec.rate, size=spec.n)
    phase = rng.uniform(0.0, spec.period, size=spec.m)
    t = np.arange(spec.length)
    clean = spec.level + spec.amplitude * np.sin(
        2.0 * np.pi * (t[None, :] + phase[:, None]) / spec.period
    )
    z = clean + spec.noise * rng.standard_normal((spec.m, spec.length))
    return SeriesPanel(z, horizon=spec.horizon)


def true_cdf(spec: SynthSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.kind == "gaussian-mixture":
        w = np.asarray(spec.weights)
        mu = np.asarray(spec.means)
        s = np.asarray(spec.stds)
        return ndtr((x[..., None] - mu) / s) @ w
    if spec.kind == "cauchy":
        return 0.5 + np.arctan((x - spec.loc) / spec.scale) / np.pi
    if spec.kind == "exponential":
        return np.where(x > 0.0, -np.expm1(-spec.rate * np.maximum(x, 0.0)), 0.0)
    raise ValueError("no scalar distribution for kind %r" % spec.kind)


def true_pdf(spec: SynthSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.kind == "gaussian-mixture":
        w = np.asarray(spec.weights)
        mu = np.asarray(spec.means)
        s = np.asarray(spec.stds)
        u = (x[..., None] - mu) / s
        return (np.exp(-0.5 * u * u) / (s * math.sqrt(2.0 * math.pi))) @ w
    if spec.kind == "cauchy":
        u = (x - spec.loc) / spec.scale
        return 1.0 / (math.pi * spec.scale * (1.0 + u * u))
    if spec.kind == "exponential":
        return np.where(x >= 0.0, spec.rate * np.exp(-spec.rate * np.maximum(x, 0.0)), 0.0)
    raise ValueError("no scalar distribution for kind %r" % spec.kind)


def _bisect_quantile(spec: SynthSpec, alphas: np.ndarray) -> np.ndarray:
    if spec.kind == "gaussian-mixture":
        mu = np.asarray(spec.means)
        s = np.asarray(spec.stds)
        lo = float(np.min(mu - 12.0 * s))
        hi = float(np.max(mu + 12.0 * s))
    elif spec.kind == "cauchy":
        lo, hi = spec.loc - spec.scale, spec.loc + spec.scale
    else:
        lo, hi = 0.0, 1.0 / spec.rate
    a_min, a_max = float(alphas.min()), float(alphas.max())
    width = hi - lo
    while true_cdf(spec, np.array(lo)) > a_min:
        lo -= width
        width *= 2.0
    width = hi - lo
    while true_cdf(spec, np.array(hi)) < a_max:
        hi += width
        width *= 2.0
    lo_v = np.full(alphas.shape, lo)
    hi_v = np.full(alphas.shape, hi)
    for _ in range(200):
        mid = 0.5 * (lo_v + hi_v)
        below = true_cdf(spec, mid) < alphas
        lo_v = np.where(below, mid, lo_v)
        hi_v = np.where(below, hi_v, mid)
        if np.max(hi_v - lo_v) < BISECT_TOL:
            break
    return 0.5 * (lo_v + hi_v)


def true_quantile(spec: SynthSpec, alpha, method: str = "auto") -> np.ndarray:
    """True quantile function of the spec.

    ``method="auto"`` uses the closed form when one exists; ``"bisect"``
    forces CDF bisection to 1e-12, the independent route for cross-checks.
    """
    al = np.asarray(alpha, dtype=float)
    if np.any((al <= 0.0) | (al >= 1.0)):
        raise ValueError("quantile levels must lie in (0, 1)")
    if spec.kind == "noisy-sinusoid-panel":
        raise ValueError("no scalar distribution for kind %r" % spec.kind)
    if method == "bisect" or (method == "auto" and spec.kind == "gaussian-mixture"):
        return _bisect_quantile(spec, al)
    if method != "auto":
        raise ValueError("method must be 'auto' or 'bisect'")
    if spec.kind == "cauchy":
        return spec.loc + spec.scale * np.tan(np.pi * (al - 0.5))
    return -np.log1p(-al) / spec.rate


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def save_panel(panel: SeriesPanel, path) -> None:
    """Write long-format CSV `series_id,timestamp,target[,cov_*]`.

    With covariates, each series carries ``horizon`` trailing rows holding
    the known future covariates with an empty target cell. Values are written
    with full round-trip precision; NaN targets become empty cells.
    """
    n_cov = panel.n_cov
    header = ["series_id", "timestamp", "target"] + ["cov_%d" % j for j in range(n_cov)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        T = panel.length
        rows_per = T + (panel.horizon if n_cov else 0)
        for i in range(panel.m):
            for t in range(rows_per):
                tgt = _fmt(panel.targets[i, t]) if t < T else ""
                row = [str(i), str(t), tgt]
                if n_cov:
                    row += [repr(float(v)) for v in panel.covariates[i, t]]
                w.writerow(row)


def _parse_float(cell: str, what: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise PanelFormatError("non-numeric %s %r" % (what, cell), line) from None


def load_panel(path, horizon: Optional[int] = None, context: Optional[int] = None) -> SeriesPanel:
    """Parse a long-format panel CSV into a SeriesPanel.

    Timestamps must be strictly increasing and equally spaced per series, all
    series must have the same row count, and covariate cells must be filled
    on every row. Trailing rows with empty targets are the known-future
    covariate block; its per-series length fixes the horizon (which must
    agree with an explicit ``horizon`` argument). Panels without covariates
    need an explicit ``horizon``. Violations raise PanelFormatError with the
    offending 1-based line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file", 1) from None
        header = [h.strip() for h in header]
        if header[:3] != ["series_id", "timestamp", "target"]:
            raise PanelFormatError(
                "header must start with series_id,timestamp,target", 1
            )
        cov_names = header[3:]
        for name in cov_names:
            if not name.startswith("cov_"):
                raise PanelFormatError("covariate columns must be named cov_*", 1)
        n_cov = len(cov_names)
        order: list = []
        rows: dict = {}
        seen: set = set()
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != 3 + n_cov:
                raise PanelFormatError(
                    "expected %d fields, got %d" % (3 + n_cov, len(raw)), lineno
                )
            sid = raw[0].strip()
            ts = _parse_float(raw[1].strip(), "timestamp", lineno)
            key = (sid, ts)
            if key in seen:
                raise PanelFormatError(
                    "duplicate (series_id, timestamp) (%s, %g)" % (sid, ts), lineno
                )
            seen.add(key)
            tgt_cell = raw[2].strip()
            tgt = math.nan if tgt_cell == "" else _parse_float(tgt_cell, "target", lineno)
            cov = []
            for j, cell in enumerate(raw[3:]):
                cell = cell.strip()
                if cell == "":
                    raise PanelFormatError("missing covariate value in %s" % cov_names[j], lineno)
                cov.append(_parse_float(cell, "covariate", lineno))
            if sid not in rows:
                order.append(sid)
                rows[sid] = []
            rows[sid].append((lineno, ts, tgt, cov))
    if not order:
        raise PanelFormatError("no data rows", 2)

    n_rows = len(rows[order[0]])
    for sid in order:
        series = rows[sid]
        if len(series) != n_rows:
            raise PanelFormatError(
                "series %r has %d rows, series %r has %d"
                % (sid, len(series), order[0], n_rows),
                series[-1][0],
            )
        ts = [r[1] for r in series]
        dt0 = ts[1] - ts[0] if len(ts) > 1 else 1.0
        if dt0 <= 0.0:
            raise PanelFormatError("timestamps must be strictly increasing", series[1][0])
        for k in range(1, len(ts)):
            dt = ts[k] - ts[k - 1]
            if dt <= 0.0:
                raise PanelFormatError("timestamps must be strictly increasing", series[k][0])
            if abs(dt - dt0) > 1e-9 * max(1.0, abs(dt0)):
                raise PanelFormatError(
                    "unequal timestamp spacing (%g vs %g)" % (dt, dt0), series[k][0]
                )

    m = len(order)
    targets_all = np.array([[r[2] for r in rows[sid]] for sid in order])
    cov_all = None
    if n_cov:
        cov_all = np.array([[r[3] for r in rows[sid]] for sid in order])

    # trailing all-NaN rows with covariates are the known-future block
    tail = 0
    if n_cov:
        while tail < n_rows and np.all(np.isnan(targets_all[:, n_rows - 1 - tail])):
            tail += 1
        if tail == 0:
            raise PanelFormatError(
                "covariate panels need trailing future rows with empty targets", n_rows + 1
            )
        for i, sid in enumerate(order):
            col = targets_all[i, : n_rows - tail]
            if col.size and np.isnan(col[-1]):
                raise PanelFormatError(
                    "series %r future block is longer than the shared one" % sid,
                    rows[sid][n_rows - tail - 1][0],
                )
        if horizon is not None and horizon != tail:
            raise PanelFormatError(
                "explicit horizon %d does not match the %d future rows" % (horizon, tail)
            )
        horizon = tail
    elif horizon is None:
        raise PanelFormatError("horizon is required for panels without future covariate rows")

    targets = targets_all[:, : n_rows - tail] if tail else targets_all
    try:
        return SeriesPanel(targets, horizon=int(horizon), covariates=cov_all, context=context)
    except ValueError as exc:
        raise PanelFormatError(str(exc)) from exc
